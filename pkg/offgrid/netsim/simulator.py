import heapq
import itertools

from offgrid.utils.logger_setup import log_debug

log_debug("netsim.simulator module initialized.")


class Simulator:
    """Discrete event loop on a virtual clock.

    Events run in time order, ties in scheduling order. run_until() may be
    re-entered from inside an event callback: a server task blocked on a
    proxy fault pumps the loop until its object arrives.
    """

    def __init__(self):
        self.now = 0.0
        self._events = []
        self._seq = itertools.count()
        self.events_processed = 0

    def schedule(self, at, callback):
        heapq.heappush(self._events, (max(at, self.now), next(self._seq), callback))

    @property
    def pending(self):
        return len(self._events)

    def next_time(self):
        return self._events[0][0] if self._events else None

    def advance_to(self, t):
        if t > self.now:
            self.now = t

    def step(self):
        if not self._events:
            return False
        t, _, callback = heapq.heappop(self._events)
        self.advance_to(t)
        self.events_processed += 1
        callback()
        return True

    def run_one(self, deadline=None):
        """Run the next event if it is due by `deadline`; False when none is."""
        if not self._events:
            return False
        if deadline is not None and self._events[0][0] > deadline:
            return False
        return self.step()

    def run_until(self, predicate, deadline=None):
        """Pump events until predicate() holds. On failure the clock stops at `deadline`."""
        while not predicate():
            if not self.run_one(deadline):
                if deadline is not None:
                    self.advance_to(deadline)
                return predicate()
        return True

    def run(self):
        while self.step():
            pass
