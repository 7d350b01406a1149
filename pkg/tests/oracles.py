"""Brute-force reference computations, independent of the package internals.

Each scheduler oracle re-derives every tag from its defining formula over
the whole arrival trace with plain Fractions and list scans (no incremental
state, no integer tag scaling), then replays the non-preemptive service loop.
Token arithmetic is likewise recomputed directly.
"""

from __future__ import annotations

from fractions import Fraction

NS = 1_000_000_000


def tx_ns(size, rate):
    return -(-size * 8 * NS // rate)


def normalize(weights):
    total = sum(weights.values())
    return {q: Fraction(w, 1) / total for q, w in weights.items()}


def _service_loop(arrivals, rate, tagger, chooser):
    """Replay non-preemptive service; tags recomputed at every arrival.

    arrivals: [(t_ns, qid, size)] in submission order.
    tagger(state, t, qid, size) -> per-packet record appended to the queue.
    chooser(state) -> (qid, record) to serve next among heads.
    Returns service order as a list of arrival indices.
    """
    pend = sorted(range(len(arrivals)), key=lambda i: (arrivals[i][0], i))
    state = {
        "queues": {},  # qid -> list of (idx, record)
        "last_f": {},
        "v": Fraction(0),
        "extra": {},
    }
    order = []
    free = 0
    pos = 0
    n = len(pend)
    while pos < n or any(state["queues"].values()):
        if not any(state["queues"].values()):
            t = arrivals[pend[pos]][0]
            if t >= free:
                state["v"] = Fraction(0)
                state["last_f"] = {}
                state["extra"] = {}
        else:
            t = free
        while pos < n and arrivals[pend[pos]][0] <= t:
            i = pend[pos]
            at, qid, size = arrivals[i]
            rec = tagger(state, at, qid, size)
            state["queues"].setdefault(qid, []).append((i, rec))
            pos += 1
        if not any(state["queues"].values()):
            continue
        qid, (i, rec) = chooser(state)
        state["queues"][qid].pop(0)
        order.append(i)
        at, _, size = arrivals[i]
        start = free
        free = start + tx_ns(size, rate)
        state["served"] = (qid, rec, size)
        if "on_serve" in state["extra"]:
            state["extra"]["on_serve"](state, qid, rec, size)
    return order


def _min_head(state, key):
    best = None
    for qid in sorted(state["queues"]):
        q = state["queues"][qid]
        if q:
            k = key(qid, q[0][1])
            if best is None or k < best[0]:
                best = (k, qid, q[0])
    return best[1], best[2]


def scfq_order(arrivals, weights, rate):
    phi = normalize(weights)
    rho = {q: phi[q] * rate for q in phi}

    def tagger(state, t, qid, size):
        v = state["extra"].get("vtime", Fraction(0))
        prev = state["last_f"].get(qid, Fraction(0))
        f = max(v, prev) + Fraction(8 * size) / rho[qid]
        state["last_f"][qid] = f
        return f

    def chooser(state):
        qid, item = _min_head(state, lambda q, f: f)
        state["extra"]["vtime"] = item[1]  # finish tag of packet entering service
        return qid, item

    return _service_loop(arrivals, rate, tagger, chooser)


def sfq_order(arrivals, weights, rate):
    phi = normalize(weights)
    rho = {q: phi[q] * rate for q in phi}

    def tagger(state, t, qid, size):
        v = state["extra"].get("vtime", Fraction(0))
        prev = state["last_f"].get(qid, Fraction(0))
        s = max(v, prev)
        state["last_f"][qid] = s + Fraction(8 * size) / rho[qid]
        return s

    def chooser(state):
        qid, item = _min_head(state, lambda q, s: s)
        state["extra"]["vtime"] = item[1]  # start tag of packet entering service
        return qid, item

    return _service_loop(arrivals, rate, tagger, chooser)


def wf2qplus_order(arrivals, weights, rate):
    phi = normalize(weights)
    rho = {q: phi[q] * rate for q in phi}

    def tagger(state, t, qid, size):
        v = state["extra"].get("vtime", Fraction(0))
        prev = state["last_f"].get(qid, Fraction(0))
        s = max(v, prev)
        f = s + Fraction(8 * size) / rho[qid]
        state["last_f"][qid] = f
        return (s, f)

    def chooser(state):
        v = state["extra"].get("vtime", Fraction(0))
        pending_bytes = state["extra"].pop("pending_bytes", 0)
        if pending_bytes:
            v = v + Fraction(8 * pending_bytes, rate)
        min_s = None
        for q in state["queues"].values():
            if q and (min_s is None or q[0][1][0] < min_s):
                min_s = q[0][1][0]
        if min_s is not None and min_s > v:
            v = min_s
        state["extra"]["vtime"] = v
        best = None
        for qid in sorted(state["queues"]):
            q = state["queues"][qid]
            if q and q[0][1][0] <= v:
                if best is None or q[0][1][1] < best[1][1][1]:
                    best = (qid, q[0])
        assert best is not None

        def on_serve(state, qid, rec, size):
            state["extra"]["pending_bytes"] = size
            state["extra"]["on_serve"] = on_serve

        state["extra"]["on_serve"] = on_serve
        return best

    return _service_loop(arrivals, rate, tagger, chooser)


def pgps_order(arrivals, weights, rate):
    """PGPS with the reference virtual time integrated in plain Fractions."""
    phi = normalize(weights)
    rho = {q: phi[q] * rate for q in phi}

    def advance(state, t_ns):
        v = state["extra"].get("vtime", Fraction(0))
        t_last = state["extra"].get("t_last", Fraction(0))
        t = Fraction(t_ns)
        while t_last < t:
            active = [q for q, f in state["last_f"].items() if f > v]
            if not active:
                t_last = t
                break
            denom = sum(phi[q] for q in active)
            f_star = min(state["last_f"][q] for q in active)
            dt_need = (f_star - v) * denom * NS
            if t_last + dt_need <= t:
                v = f_star
                t_last = t_last + dt_need
            else:
                v = v + Fraction(t - t_last, NS) / denom
                t_last = t
        state["extra"]["vtime"] = v
        state["extra"]["t_last"] = t_last

    def tagger(state, t, qid, size):
        if "t_last" not in state["extra"]:
            state["extra"]["t_last"] = Fraction(t)
            state["extra"]["vtime"] = Fraction(0)
        advance(state, t)
        v = state["extra"]["vtime"]
        prev = state["last_f"].get(qid, Fraction(0))
        f = max(v, prev) + Fraction(8 * size) / rho[qid]
        state["last_f"][qid] = f
        return f

    def chooser(state):
        return _min_head(state, lambda q, f: f)

    return _service_loop(arrivals, rate, tagger, chooser)


TAG_ORACLES = {
    "scfq": scfq_order,
    "sfq": sfq_order,
    "wf2q+": wf2qplus_order,
    "pgps": pgps_order,
}


def token_meter_trace(cir_bps, cbs_bytes, arrivals):
    """Independent token arithmetic: (t_ns, size) -> list of in/out booleans."""
    tokens = Fraction(cbs_bytes)
    last = 0
    out = []
    for t, size in arrivals:
        tokens = min(Fraction(cbs_bytes), tokens + Fraction(cir_bps * (t - last), 8 * NS))
        last = t
        if tokens >= size:
            tokens -= size
            out.append(True)
        else:
            out.append(False)
    return out
