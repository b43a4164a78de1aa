// Latest-wins request scheduling. Rapid parameter changes coalesce into at
// most one in-flight request per interval, and responses that arrive out of
// order are discarded unless they are the newest seen.

export interface LatestWinsOptions<P, R> {
  minIntervalMs: number;
  send: (params: P, requestId: number) => Promise<R>;
  apply: (result: R, requestId: number) => void;
  onError?: (err: unknown, requestId: number) => void;
  /** clock, injectable for tests; defaults to Date.now */
  now?: () => number;
  /** timer, injectable for tests; defaults to setTimeout */
  schedule?: (fn: () => void, ms: number) => unknown;
}

/**
 * Coalesces a stream of parameter updates into rate-limited requests.
 *
 * Guarantees, in order of importance:
 *  - request ids are assigned monotonically at dispatch time;
 *  - at most one request leaves per `minIntervalMs` window;
 *  - a trailing update always fires once the window reopens (none lost);
 *  - a response is applied only if its id exceeds every previously applied
 *    id, so stale responses can never clobber newer ones.
 */
export class LatestWins<P, R> {
  private readonly opts: LatestWinsOptions<P, R>;
  private readonly now: () => number;
  private readonly schedule: (fn: () => void, ms: number) => unknown;

  private nextId = 1;
  private lastApplied = 0;
  private lastSentAt = -Infinity;
  private pending: P | null = null;
  private timerArmed = false;

  constructor(opts: LatestWinsOptions<P, R>) {
    this.opts = opts;
    this.now = opts.now ?? (() => Date.now());
    this.schedule = opts.schedule ?? ((fn, ms) => setTimeout(fn, ms));
  }

  /** Submit parameters; they replace any not-yet-sent pending ones. */
  update(params: P): void {
    this.pending = params;
    this.pump();
  }

  /** Highest request id handed out so far. */
  lastIssuedId(): number {
    return this.nextId - 1;
  }

  private pump(): void {
    if (this.pending === null) {
      return;
    }
    const wait = this.lastSentAt + this.opts.minIntervalMs - this.now();
    if (wait > 0) {
      if (!this.timerArmed) {
        this.timerArmed = true;
        this.schedule(() => {
          this.timerArmed = false;
          this.pump();
        }, wait);
      }
      return;
    }
    const params = this.pending;
    this.pending = null;
    this.lastSentAt = this.now();
    const id = this.nextId;
    this.nextId += 1;
    this.opts.send(params, id).then(
      (result) => {
        if (id > this.lastApplied) {
          this.lastApplied = id;
          this.opts.apply(result, id);
        }
      },
      (err) => {
        // Errors do not advance lastApplied: a newer failure must not
        // block an older in-flight success, only newer successes may.
        if (id > this.lastApplied && this.opts.onError) {
          this.opts.onError(err, id);
        }
      },
    );
  }
}
