/** Client-side submission guard: one decision per request, ever.  A failed
 * submission unlocks so the operator can retry; a successful one stays
 * locked for the lifetime of the page. */

export class DecisionDedup {
  private readonly inFlight = new Set<string>();
  private readonly completed = new Set<string>();

  tryBegin(requestId: string): boolean {
    if (this.inFlight.has(requestId) || this.completed.has(requestId)) {
      return false;
    }
    this.inFlight.add(requestId);
    return true;
  }

  succeed(requestId: string): void {
    this.inFlight.delete(requestId);
    this.completed.add(requestId);
  }

  fail(requestId: string): void {
    this.inFlight.delete(requestId);
  }

  isSettled(requestId: string): boolean {
    return this.completed.has(requestId);
  }
}
