"""Binary problem instances.

Every instance maps bit strings ``x in {0,1}^d`` to a real objective that is
maximized. Evaluation is batched: ``evaluate_batch`` takes an ``(n, d)`` array
and returns ``n`` values; ``evaluate`` is the single-solution convenience.
"""

import queue
import shlex
import subprocess
import threading
import warnings
from collections import defaultdict

import numpy as np

CCP_LAMBDAS = (0.0, 1e-4, 1e-2)
CCP_TRAIN_LAMBDA = 1e-4
CCP_UPPER_LIMIT = 0.1

# (q_A|0, q_A|B, q_B|0, q_B|A)
COMIC_Q_SETTINGS = ((0.5, 0.75, 0.5, 0.75), (0.5, 0.25, 0.5, 0.25))


class ProtocolError(RuntimeError):
    """The external evaluator broke the wire protocol."""


def as_bits(x, dim=None):
    """Validate ``x`` as a bit string (or a batch of them) and return an int8 array."""
    arr = np.asarray(x)
    if arr.dtype == bool:
        arr = arr.astype(np.int8)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError("bit strings may only contain 0 and 1")
    if dim is not None and arr.shape[-1] != dim:
        raise ValueError(f"expected length {dim}, got {arr.shape[-1]}")
    return arr.astype(np.int8, copy=False)


def bits_from_str(s):
    return np.array([int(c) for c in s.strip()], dtype=np.int8)


def bits_to_str(x):
    return "".join(str(int(b)) for b in np.asarray(x).ravel())


class ProblemInstance:
    """Base class: subclasses set ``dim`` and ``id`` and implement ``_evaluate``."""

    dim: int
    id: str
    # True for learned stand-ins; selects the normalization sample size.
    surrogate = False

    def evaluate_batch(self, X):
        X = as_bits(X, self.dim)
        if X.ndim != 2:
            raise ValueError("evaluate_batch expects a 2-D array")
        return np.asarray(self._evaluate(X), dtype=np.float64)

    def evaluate(self, x):
        x = as_bits(x, self.dim)
        if x.ndim != 1:
            raise ValueError("evaluate expects a single bit string")
        return float(self.evaluate_batch(x[None, :])[0])

    def _evaluate(self, X):
        raise NotImplementedError

    def spec(self):
        """JSON-able description sufficient to rebuild the instance."""
        raise NotImplementedError(f"{type(self).__name__} cannot be serialized")

    def __repr__(self):
        return f"{type(self).__name__}(id={self.id!r}, dim={self.dim})"


# ---------------------------------------------------------------- OneMax


class OneMaxInstance(ProblemInstance):
    def __init__(self, target, id=None):
        self.target = as_bits(target).copy()
        if self.target.ndim != 1 or self.target.size == 0:
            raise ValueError("target must be a non-empty bit string")
        self.target.setflags(write=False)
        self.dim = int(self.target.size)
        self.id = id or f"onemax-{bits_to_str(self.target)}"

    def _evaluate(self, X):
        return self.dim - np.abs(X - self.target).sum(axis=1)

    def spec(self):
        return {"kind": "onemax", "target": bits_to_str(self.target), "id": self.id}


def onemax_evaluate(instance, x):
    return instance.evaluate(x)


def random_onemax(dim, rng, id=None):
    return OneMaxInstance(rng.integers(0, 2, size=dim), id=id)


# ---------------------------------------------------------------- contamination control


class CcpInstance(ProblemInstance):
    """Contamination control with pre-drawn Monte Carlo scenarios.

    ``alpha`` and ``gamma`` have shape ``(T, d)``; ``z0`` has shape ``(T,)``.
    """

    def __init__(self, alpha, gamma, z0, lam, costs=None, upper=CCP_UPPER_LIMIT,
                 seed=None, id=None):
        self.alpha = np.array(alpha, dtype=np.float64)
        self.gamma = np.array(gamma, dtype=np.float64)
        self.z0 = np.array(z0, dtype=np.float64)
        if self.alpha.ndim != 2 or self.alpha.shape != self.gamma.shape:
            raise ValueError("alpha and gamma must be (T, d) arrays of equal shape")
        if self.z0.shape != (self.alpha.shape[0],):
            raise ValueError("z0 must have one entry per scenario")
        self.T, self.dim = self.alpha.shape
        self.lam = float(lam)
        self.costs = np.ones(self.dim) if costs is None else np.array(costs, dtype=np.float64)
        self.upper = np.broadcast_to(np.asarray(upper, dtype=np.float64), (self.dim,)).copy()
        self.seed = seed
        for arr in (self.alpha, self.gamma, self.z0, self.costs, self.upper):
            arr.setflags(write=False)
        self.id = id or f"ccp-d{self.dim}-l{self.lam:g}-s{seed}"

    def trajectories(self, X):
        """Contamination levels ``z`` of shape ``(n, T, d)``."""
        X = as_bits(X, self.dim).astype(np.float64)
        n = X.shape[0]
        z = np.broadcast_to(self.z0, (n, self.T)).copy()
        out = np.empty((n, self.T, self.dim))
        for i in range(self.dim):
            xi = X[:, i:i + 1]
            z = self.alpha[:, i] * (1.0 - xi) * (1.0 - z) + (1.0 - self.gamma[:, i] * xi) * z
            out[:, :, i] = z
        return out

    def _evaluate(self, X):
        z = self.trajectories(X)
        violation = (z > self.upper).mean(axis=1).sum(axis=1)
        cost = X @ self.costs
        return -(cost + violation + self.lam * X.sum(axis=1))

    def spec(self):
        if self.seed is None:
            raise NotImplementedError("only seeded CCP instances can be serialized")
        return {"kind": "ccp", "dim": self.dim, "lam": self.lam, "T": self.T,
                "seed": self.seed, "id": self.id}


def ccp_make_instance(d_I, lam, T=100, seed=0, costs=None, id=None):
    if d_I < 1 or T < 1:
        raise ValueError("d_I and T must be positive")
    if not any(np.isclose(lam, v, rtol=0, atol=1e-15) for v in CCP_LAMBDAS):
        warnings.warn(f"lambda={lam} is outside the usual set {CCP_LAMBDAS}", stacklevel=2)
    rng = np.random.default_rng(seed)
    alpha = rng.beta(1.0, 17.0 / 3.0, size=(T, d_I))
    gamma = rng.beta(1.0, 7.0 / 3.0, size=(T, d_I))
    z0 = rng.beta(1.0, 30.0, size=T)
    return CcpInstance(alpha, gamma, z0, lam, costs=costs, seed=seed, id=id)


def ccp_evaluate(instance, x):
    return instance.evaluate(x)


def ccp_domain_mutate(instance, rng):
    """Fresh training-distribution CCP instance of the same dimension."""
    seed = int(rng.integers(0, 2**31 - 1))
    return ccp_make_instance(instance.dim, CCP_TRAIN_LAMBDA, T=instance.T, seed=seed,
                             costs=instance.costs)


# ---------------------------------------------------------------- complementary influence


def repair_seed_set(x, k):
    """Keep only the first ``k`` selected positions of ``x``."""
    if k < 0:
        raise ValueError("k must be non-negative")
    x = as_bits(x).copy()
    on = np.flatnonzero(x)
    if on.size > k:
        x[on[k:]] = 0
    return x


def load_edge_list(path):
    """Read ``u v [p]`` lines; returns a list of ``(u, v, p_or_None)``."""
    edges = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise ValueError(f"{path}:{lineno}: expected 'u v [p]'")
            u, v = int(parts[0]), int(parts[1])
            if u < 0 or v < 0:
                raise ValueError(f"{path}:{lineno}: node ids must be non-negative")
            p = float(parts[2]) if len(parts) == 3 else None
            if p is not None and not 0.0 <= p <= 1.0:
                raise ValueError(f"{path}:{lineno}: probability out of [0, 1]")
            edges.append((u, v, p))
    return edges


def weighted_cascade(edges):
    """Fill missing edge probabilities with ``1 / indegree(v)``."""
    indeg = defaultdict(int)
    for _, v, _ in edges:
        indeg[v] += 1
    return [(u, v, 1.0 / indeg[v] if p is None else p) for u, v, p in edges]


class ComicInstance(ProblemInstance):
    """Seed selection for opinion B under a complementary two-opinion cascade.

    Edge liveness and node adoption thresholds are pre-drawn for ``R``
    scenarios so the objective is a deterministic function. An informed node
    adopts an opinion when its threshold is at most the applicable ``q``;
    a node that later adopts the other opinion reconsiders. Within a step,
    A decisions precede B decisions.
    """

    def __init__(self, edges, candidates, seed_a=(), q=COMIC_Q_SETTINGS[0], k=None,
                 R=100, seed=0, id=None, graph_path=None):
        edges = weighted_cascade(edges)
        nodes = sorted({u for u, _, _ in edges} | {v for _, v, _ in edges}
                       | set(seed_a) | set(candidates))
        node_set = {u for u, _, _ in edges} | {v for _, v, _ in edges}
        missing = [c for c in candidates if c not in node_set]
        if missing:
            raise ValueError(f"candidate nodes not in graph: {missing}")
        self.edges = edges
        self.nodes = nodes
        self.index = {n: i for i, n in enumerate(nodes)}
        self.candidates = [int(c) for c in candidates]
        self.seed_a = sorted(int(a) for a in seed_a)
        self.q = tuple(float(v) for v in q)
        if len(self.q) != 4 or not all(0.0 <= v <= 1.0 for v in self.q):
            raise ValueError("q must hold four probabilities")
        self.dim = len(self.candidates)
        self.k = self.dim if k is None else int(k)
        if not 0 <= self.k <= self.dim:
            raise ValueError("k must lie in [0, d_I]")
        self.R = int(R)
        self.seed = seed
        self.graph_path = graph_path
        self.id = id or f"comic-d{self.dim}-k{self.k}-s{seed}"

        rng = np.random.default_rng(seed)
        probs = np.array([p for _, _, p in edges])
        self._live = rng.random((self.R, len(edges))) < probs
        self._thr = rng.random((self.R, 2, len(nodes)))
        src = np.array([self.index[u] for u, _, _ in edges], dtype=np.int64)
        dst = np.array([self.index[v] for _, v, _ in edges], dtype=np.int64)
        # per-scenario live adjacency
        self._adj = []
        for r in range(self.R):
            adj = defaultdict(list)
            for e in np.flatnonzero(self._live[r]):
                adj[src[e]].append(dst[e])
            self._adj.append(adj)

    def seeds_b(self, x):
        x = repair_seed_set(as_bits(x, self.dim), self.k)
        return [self.candidates[i] for i in np.flatnonzero(x)]

    def _spread(self, r, seeds_a, seeds_b):
        qa0, qab, qb0, qba = self.q
        adj, thr_a, thr_b = self._adj[r], self._thr[r, 0], self._thr[r, 1]
        adopt_a, adopt_b = set(seeds_a), set(seeds_b)
        informed_a, informed_b = set(seeds_a), set(seeds_b)
        front_a, front_b = sorted(adopt_a), sorted(adopt_b)
        while front_a or front_b:
            reach_a = {v for u in front_a for v in adj.get(u, ()) if v not in adopt_a}
            reach_b = {v for u in front_b for v in adj.get(u, ()) if v not in adopt_b}
            informed_a |= reach_a
            informed_b |= reach_b
            new_a, new_b = [], []
            for v in sorted(reach_a):
                if thr_a[v] <= (qab if v in adopt_b else qa0):
                    adopt_a.add(v)
                    new_a.append(v)
            # B-informed non-adopters whose A state just changed reconsider
            retry_b = {v for v in new_a if v in informed_b and v not in adopt_b}
            for v in sorted(reach_b | retry_b):
                if v in adopt_b:
                    continue
                if thr_b[v] <= (qba if v in adopt_a else qb0):
                    adopt_b.add(v)
                    new_b.append(v)
            for v in new_b:
                if v in informed_a and v not in adopt_a and thr_a[v] <= qab:
                    adopt_a.add(v)
                    new_a.append(v)
            front_a, front_b = new_a, new_b
        return len(adopt_b)

    def _evaluate(self, X):
        sa = [self.index[a] for a in self.seed_a]
        out = np.empty(X.shape[0])
        for row, x in enumerate(X):
            sb = [self.index[b] for b in self.seeds_b(x)]
            if not sb:
                out[row] = 0.0
                continue
            out[row] = np.mean([self._spread(r, sa, sb) for r in range(self.R)])
        return out

    def spec(self):
        if self.graph_path is None:
            raise NotImplementedError("only file-backed ComIC instances can be serialized")
        return {"kind": "comic", "graph": str(self.graph_path), "candidates": self.candidates,
                "seed_a": self.seed_a, "q": list(self.q), "k": self.k, "R": self.R,
                "seed": self.seed, "id": self.id}


def comic_evaluate(instance, x):
    return instance.evaluate(x)


def random_comic_instance(edges, dim, rng, n_seed_a=0, R=100, graph_path=None, id=None):
    """Candidate set, q-setting and ``k`` drawn as for the benchmark instances."""
    nodes = sorted({u for u, _, _ in edges} | {v for _, v, _ in edges})
    if dim > len(nodes):
        raise ValueError("graph has fewer nodes than the requested dimension")
    cand = [int(c) for c in rng.choice(nodes, size=dim, replace=False)]
    rest = sorted(set(nodes) - set(cand))
    seed_a = [int(a) for a in rng.choice(rest, size=min(n_seed_a, len(rest)), replace=False)]
    q = COMIC_Q_SETTINGS[int(rng.integers(len(COMIC_Q_SETTINGS)))]
    k = int(rng.integers(int(np.ceil(0.2 * dim)), int(np.floor(0.6 * dim)) + 1))
    return ComicInstance(edges, cand, seed_a, q=q, k=k, R=R,
                         seed=int(rng.integers(2**31 - 1)), id=id, graph_path=graph_path)


# ---------------------------------------------------------------- external black box


class ExternalInstance(ProblemInstance):
    """Objective computed by a separate evaluator process over stdio.

    Protocol (one line each way, UTF-8): the adapter sends ``DIM`` and reads
    the dimension; each evaluation sends ``EVAL <bits>`` and reads one float.
    The returned value is used as-is: the evaluator owns the sign convention.
    """

    def __init__(self, command, dim=None, timeout=30.0, id=None):
        if isinstance(command, str):
            command = shlex.split(command)
        self.command = [str(c) for c in command]
        self.timeout = float(timeout)
        self._lock = threading.Lock()
        self._proc = None
        self._lines = None
        self._start()
        self._send("DIM")
        reported = self._read_line()
        try:
            reported = int(reported)
        except ValueError:
            self.close()
            raise ProtocolError(f"bad DIM reply: {reported!r}") from None
        if dim is not None and int(dim) != reported:
            self.close()
            raise ProtocolError(f"evaluator reports dimension {reported}, expected {dim}")
        self.dim = reported
        self.id = id or "external-" + "-".join(self.command[-1:])

    def _start(self):
        self._proc = subprocess.Popen(
            self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            text=True, encoding="utf-8", bufsize=1)
        self._lines = queue.Queue()

        def pump(stream, sink):
            for line in stream:
                sink.put(line)
            sink.put(None)

        threading.Thread(target=pump, args=(self._proc.stdout, self._lines), daemon=True).start()

    def _send(self, line):
        if self._proc.poll() is not None:
            raise ProtocolError(f"evaluator exited with code {self._proc.returncode}")
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolError("evaluator closed its input") from exc

    def _read_line(self):
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise TimeoutError(f"evaluator did not answer within {self.timeout}s") from None
        if line is None:
            raise ProtocolError("evaluator exited before replying")
        return line.strip()

    def _evaluate(self, X):
        out = np.empty(X.shape[0])
        with self._lock:
            for row, x in enumerate(X):
                self._send("EVAL " + bits_to_str(x))
                reply = self._read_line()
                try:
                    out[row] = float(reply)
                except ValueError:
                    raise ProtocolError(f"non-numeric reply: {reply!r}") from None
                if not np.isfinite(out[row]):
                    raise ProtocolError(f"non-finite reply: {reply!r}")
        return out

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self._proc.kill()

    def __del__(self):
        self.close()

    def spec(self):
        return {"kind": "external", "command": self.command, "dim": self.dim,
                "timeout": self.timeout, "id": self.id}


def external_evaluate(instance, x):
    return instance.evaluate(x)


# ---------------------------------------------------------------- specs


def instance_from_spec(spec):
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "onemax":
        return OneMaxInstance(bits_from_str(spec["target"]), id=spec.get("id"))
    if kind == "ccp":
        return ccp_make_instance(spec["dim"], spec["lam"], T=spec.get("T", 100),
                                 seed=spec["seed"], id=spec.get("id"))
    if kind == "comic":
        edges = load_edge_list(spec["graph"])
        return ComicInstance(edges, spec["candidates"], spec.get("seed_a", ()),
                             q=spec.get("q", COMIC_Q_SETTINGS[0]), k=spec.get("k"),
                             R=spec.get("R", 100), seed=spec.get("seed", 0),
                             id=spec.get("id"), graph_path=spec["graph"])
    if kind == "external":
        return ExternalInstance(spec["command"], dim=spec.get("dim"),
                                timeout=spec.get("timeout", 30.0), id=spec.get("id"))
    raise ValueError(f"unknown instance kind {kind!r}")
