"""Proper geodesic metric spaces realized as locally finite graphs.

Every space exposes the same oracle surface: a symmetric neighbor relation,
a base point, an exact norm/distance (closed form where the space admits
one, BFS otherwise), deterministic geodesics, ball enumeration, and
nearest-point projections.  Built-in kinds:

  * ``free_group(k)``   -- the 2k-regular tree (reduced words),
  * ``grid(d)``         -- Z^d with the l^1 word metric,
  * ``free_product(..)``-- free products of the above via syllable normal
                           forms (distance = sum of factor norms),
  * ``loopy_ray(N)``    -- a geodesic ray with a loop of arm length n^2 and
                           span n attached for each 2 <= n <= N,
  * ``edge_list``       -- an arbitrary finite graph, everything by BFS.

Group-structured spaces additionally provide incremental accumulators
(right/left multiplication by one generator in O(1) amortized) so that
norms and distances along long unit-speed paths cost O(length) overall
instead of O(length^2).
"""

from __future__ import annotations

import itertools
from collections import deque

from .errors import DomainError

DEFAULT_BALL_CAP = 10_000


# ---------------------------------------------------------------------------
# paths

class PathSeg:
    """A finite vertex sequence, optionally a unit-speed graph path.

    For group spaces a unit-speed path is stored as a start vertex plus a
    letter sequence (one generator per edge); vertices are materialized on
    demand.  General paths store their vertices outright.  The optional
    (q, Q) fields are a quasi-geodesic certificate attached by the checker.
    """

    def __init__(self, sp, vertices=None, start=None, letters=None,
                 q=None, Q=None, is_graph_path=True):
        self.sp = sp
        self.q = q
        self.Q = Q
        self.is_graph_path = is_graph_path
        self._norms = None
        if letters is not None:
            if start is None:
                start = sp.basepoint
            self.start = start
            self.letters = list(letters)
            self._vertices = None
        else:
            if vertices is None or len(vertices) == 0:
                raise DomainError("a path needs at least one vertex")
            self._vertices = list(vertices)
            self.start = self._vertices[0]
            self.letters = None

    def __len__(self):
        if self._vertices is not None:
            return len(self._vertices)
        return len(self.letters) + 1

    def vertex(self, i):
        if self._vertices is not None:
            return self._vertices[i]
        acc = self.sp.right_acc(self.start)
        for g in self.letters[:i]:
            acc.push(g)
        return acc.value()

    def vertex_list(self):
        """Materialize all vertices (use sparingly on long paths)."""
        if self._vertices is None:
            out = []
            acc = self.sp.right_acc(self.start)
            out.append(acc.value())
            for g in self.letters:
                acc.push(g)
                out.append(acc.value())
            self._vertices = out
        return self._vertices

    def norms(self):
        """Norm of every vertex, computed in one linear sweep."""
        if self._norms is None:
            if self.letters is not None:
                acc = self.sp.right_acc(self.start)
                ns = [acc.norm]
                for g in self.letters:
                    acc.push(g)
                    ns.append(acc.norm)
                self._norms = ns
            else:
                self._norms = [self.sp.norm(v) for v in self._vertices]
        return self._norms

    def endpoint(self):
        if self._vertices is not None:
            return self._vertices[-1]
        return self.vertex(len(self.letters))

    def prefix(self, n_vertices):
        """The sub-path on the first n_vertices vertices."""
        if self._vertices is not None:
            return PathSeg(self.sp, vertices=self._vertices[:n_vertices],
                           q=self.q, Q=self.Q, is_graph_path=self.is_graph_path)
        return PathSeg(self.sp, start=self.start,
                       letters=self.letters[:n_vertices - 1],
                       q=self.q, Q=self.Q, is_graph_path=self.is_graph_path)

    def step_letters(self):
        """Generator letters along the path (derived for vertex-form paths)."""
        if self.letters is not None:
            return list(self.letters)
        vs = self._vertices
        return [self.sp.step_generator(u, v) for u, v in zip(vs, vs[1:])]


# ---------------------------------------------------------------------------
# base classes

class GraphSpace:
    """Base oracle surface; concrete kinds override with closed forms."""

    kind = "abstract"
    is_group = False

    @property
    def basepoint(self):
        raise NotImplementedError

    def neighbors(self, v):
        raise NotImplementedError

    def vertex_key(self, v):
        """Total order on vertices used for every deterministic tie-break."""
        raise NotImplementedError

    def sorted_neighbors(self, v):
        return sorted(self.neighbors(v), key=self.vertex_key)

    def norm(self, v):
        return self.dist(self.basepoint, v)

    def dist(self, x, y):
        raise NotImplementedError

    def ball(self, center, r, cap=DEFAULT_BALL_CAP):
        """Exactly {v : d(center, v) <= r}, by BFS; DomainError beyond cap."""
        seen = {center: 0}
        frontier = deque([center])
        while frontier:
            u = frontier.popleft()
            du = seen[u]
            if du == r:
                continue
            for w in self.neighbors(u):
                if w not in seen:
                    seen[w] = du + 1
                    if len(seen) > cap:
                        raise DomainError(
                            f"ball({r}) exceeds the {cap}-vertex enumeration cap")
                    frontier.append(w)
        return seen

    def geodesic(self, x, y):
        """Deterministic shortest path by greedy descent on the exact metric.

        At each step the lexicographically least neighbor (by vertex_key)
        that decreases d(., y) is taken, so ties always break the same way.
        """
        path = [x]
        cur = x
        d = self.dist(x, y)
        while d > 0:
            for w in self.sorted_neighbors(cur):
                dw = self.dist(w, y)
                if dw == d - 1:
                    cur = w
                    d = dw
                    break
            else:
                raise DomainError("metric oracle inconsistent with neighbors")
            path.append(cur)
        return PathSeg(self, vertices=path, q=1, Q=0)


class GroupSpace(GraphSpace):
    """A Cayley graph: vertices are group elements in canonical form."""

    is_group = True

    @property
    def identity(self):
        raise NotImplementedError

    @property
    def basepoint(self):
        return self.identity

    @property
    def gens(self):
        """Symmetrized generator list, in canonical (tie-break) order."""
        raise NotImplementedError

    def mul(self, x, y):
        raise NotImplementedError

    def inv(self, x):
        raise NotImplementedError

    def neighbors(self, v):
        out = []
        for g in self.gens:
            w = self.mul_gen(v, g)
            if w != v:
                out.append(w)
        return out

    def mul_gen(self, v, g):
        return self.mul(v, g)

    def dist(self, x, y):
        return self.norm(self.mul(self.inv(x), y))

    def step_generator(self, u, v):
        """The generator g with v = u*g, for adjacent u, v."""
        for g in self.gens:
            if self.mul_gen(u, g) == v:
                return g
        raise DomainError("vertices are not adjacent")

    class _GenericAcc:
        """Fallback accumulator: tracks the element and re-derives the norm.

        Costs one norm query per push; closed-form spaces override with
        O(1) amortized versions.
        """
        __slots__ = ("sp", "cur", "norm")

        def __init__(self, sp, start):
            self.sp = sp
            self.cur = start
            self.norm = sp.norm(start)

        def push(self, g):
            self.cur = self.sp.mul_gen(self.cur, g)
            self.norm = self.sp.norm(self.cur)

        def push_front(self, g):
            self.cur = self.sp.mul(g, self.cur)
            self.norm = self.sp.norm(self.cur)

        def value(self):
            return self.cur

    def right_acc(self, start=None):
        return self._GenericAcc(self, start if start is not None else self.identity)

    def left_acc(self, x):
        return self._GenericAcc(self, x)

    def geodesic(self, x, y):
        """Closed-form geodesic as a letter path (overridden per kind)."""
        return super().geodesic(x, y)


# ---------------------------------------------------------------------------
# free groups

class FreeGroupSpace(GroupSpace):
    """F_k as reduced words; letters are +-1..+-k, vertex = tuple of letters."""

    def __init__(self, k):
        if k < 1:
            raise DomainError(f"free_group needs k >= 1, got {k}")
        self.k = k
        self.kind = f"free_group({k})"
        # canonical generator order: a, a^-1, b, b^-1, ...; generators are
        # one-letter elements so they compose with mul like any element
        letters = tuple(itertools.chain.from_iterable((i, -i) for i in range(1, k + 1)))
        self._gens = tuple((g,) for g in letters)
        self._letter_rank = {g: r for r, g in enumerate(letters)}

    @property
    def identity(self):
        return ()

    @property
    def gens(self):
        return self._gens

    def is_identity(self, x):
        return x == ()

    def mul(self, x, y):
        out = list(x)
        for g in y:
            if out and out[-1] == -g:
                out.pop()
            else:
                out.append(g)
        return tuple(out)

    def mul_gen(self, v, g):
        (letter,) = g
        if v and v[-1] == -letter:
            return v[:-1]
        return v + (letter,)

    def inv(self, x):
        return tuple(-g for g in reversed(x))

    def norm(self, v):
        return len(v)

    def dist(self, x, y):
        # cancel the common prefix, no need to build x^-1 y
        i = 0
        m = min(len(x), len(y))
        while i < m and x[i] == y[i]:
            i += 1
        return (len(x) - i) + (len(y) - i)

    def vertex_key(self, v):
        return (len(v), tuple(self._letter_rank[g] for g in v))

    def step_generator(self, u, v):
        if len(v) == len(u) + 1:
            return (v[-1],)
        if len(u) == len(v) + 1:
            return (-u[-1],)
        raise DomainError("vertices are not adjacent")

    class _RightAcc:
        __slots__ = ("stack",)

        def __init__(self, start):
            self.stack = list(start)

        def push(self, g):
            (letter,) = g
            s = self.stack
            if s and s[-1] == -letter:
                s.pop()
            else:
                s.append(letter)

        @property
        def norm(self):
            return len(self.stack)

        def value(self):
            return tuple(self.stack)

    class _LeftAcc:
        """Holds w and supports w <- g*w; stored reversed so the word head
        sits at the end of the list."""
        __slots__ = ("rstack",)

        def __init__(self, x):
            self.rstack = list(reversed(x))

        def push_front(self, g):
            (letter,) = g
            s = self.rstack
            if s and s[-1] == -letter:
                s.pop()
            else:
                s.append(letter)

        @property
        def norm(self):
            return len(self.rstack)

        def value(self):
            return tuple(reversed(self.rstack))

    def right_acc(self, start=None):
        return self._RightAcc(start if start is not None else ())

    def left_acc(self, x):
        return self._LeftAcc(x)

    def geodesic(self, x, y):
        i = 0
        m = min(len(x), len(y))
        while i < m and x[i] == y[i]:
            i += 1
        letters = [(-g,) for g in reversed(x[i:])] + [(g,) for g in y[i:]]
        return PathSeg(self, start=x, letters=letters, q=1, Q=0)

    def parse_word(self, word):
        """Letters like 'a b A c' (capitals are inverses) -> group element."""
        out = self.right_acc()
        for tok in word.split():
            base = tok.lower()
            idx = ord(base) - ord("a") + 1
            if not (1 <= idx <= self.k) or len(base) != 1:
                raise DomainError(f"unknown generator {tok!r} for {self.kind}")
            out.push((-idx,) if tok.isupper() else (idx,))
        return out.value()


# ---------------------------------------------------------------------------
# grids

class GridSpace(GroupSpace):
    """Z^d with the standard generators; vertex = coordinate tuple."""

    def __init__(self, d):
        if d < 1:
            raise DomainError(f"grid needs d >= 1, got {d}")
        self.d = d
        self.kind = f"grid({d})"
        gens = []
        for i in range(d):
            e = [0] * d
            e[i] = 1
            gens.append(tuple(e))
            e = [0] * d
            e[i] = -1
            gens.append(tuple(e))
        self._gens = tuple(gens)

    @property
    def identity(self):
        return (0,) * self.d

    @property
    def gens(self):
        return self._gens

    def is_identity(self, x):
        return all(c == 0 for c in x)

    def mul(self, x, y):
        return tuple(a + b for a, b in zip(x, y))

    def inv(self, x):
        return tuple(-a for a in x)

    def norm(self, v):
        return sum(abs(c) for c in v)

    def dist(self, x, y):
        return sum(abs(a - b) for a, b in zip(x, y))

    def vertex_key(self, v):
        return (self.norm(v), v)

    def step_generator(self, u, v):
        g = tuple(b - a for a, b in zip(u, v))
        if sum(abs(c) for c in g) != 1:
            raise DomainError("vertices are not adjacent")
        return g

    class _Acc:
        __slots__ = ("coords", "norm")

        def __init__(self, start):
            self.coords = list(start)
            self.norm = sum(abs(c) for c in start)

        def push(self, g):
            for i, gi in enumerate(g):
                if gi:
                    c = self.coords[i]
                    self.norm += abs(c + gi) - abs(c)
                    self.coords[i] = c + gi

        push_front = push  # Z^d is abelian

        def value(self):
            return tuple(self.coords)

    def right_acc(self, start=None):
        return self._Acc(start if start is not None else self.identity)

    def left_acc(self, x):
        # left acc tracks g^-1 * x, and addition commutes
        return self._Acc(x)

    def geodesic(self, x, y):
        """Axis-ordered staircase: move coordinate 0 first, then 1, etc."""
        letters = []
        for i in range(self.d):
            delta = y[i] - x[i]
            step = [0] * self.d
            step[i] = 1 if delta > 0 else -1
            letters.extend([tuple(step)] * abs(delta))
        return PathSeg(self, start=x, letters=letters, q=1, Q=0)


# ---------------------------------------------------------------------------
# free products

class FreeProductSpace(GroupSpace):
    """Free product of grid/free-group factors, in syllable normal form.

    A vertex is a tuple of syllables (factor_index, nontrivial factor
    element) with distinct adjacent indices.  The word metric for the union
    of the factor generating sets is the sum of factor norms over syllables,
    which is exactly the graph metric of the Cayley graph.
    """

    def __init__(self, factors):
        if len(factors) < 2:
            raise DomainError("free_product needs at least two factors")
        for f in factors:
            if not isinstance(f, (GridSpace, FreeGroupSpace)):
                raise DomainError(f"unsupported free-product factor {f!r}")
        self.factors = tuple(factors)
        self.kind = "free_product(" + ", ".join(f.kind for f in factors) + ")"
        self._gens = tuple((i, g) for i, f in enumerate(factors) for g in f.gens)

    @property
    def identity(self):
        return ()

    @property
    def gens(self):
        return self._gens

    def is_identity(self, x):
        return x == ()

    def syllable_norm(self, syl):
        i, e = syl
        return self.factors[i].norm(e)

    def mul(self, x, y):
        out = list(x)
        for syl in y:
            self._push_syllable(out, syl)
        return tuple(out)

    def _push_syllable(self, out, syl):
        i, e = syl
        while out and out[-1][0] == i:
            f = self.factors[i]
            merged = f.mul(out.pop()[1], e)
            if f.is_identity(merged):
                return
            i, e = i, merged
            break
        out.append((i, e))

    def mul_gen(self, v, g):
        i, ge = g
        f = self.factors[i]
        if v and v[-1][0] == i:
            merged = f.mul(v[-1][1], ge)
            if f.is_identity(merged):
                return v[:-1]
            return v[:-1] + ((i, merged),)
        return v + ((i, ge),)

    def inv(self, x):
        return tuple((i, self.factors[i].inv(e)) for i, e in reversed(x))

    def norm(self, v):
        return sum(self.factors[i].norm(e) for i, e in v)

    def dist(self, x, y):
        # cancel the common syllable prefix directly
        j = 0
        m = min(len(x), len(y))
        while j < m and x[j] == y[j]:
            j += 1
        d = sum(self.syllable_norm(s) for s in x[j:]) \
            + sum(self.syllable_norm(s) for s in y[j:])
        if j < m and x[j][0] == y[j][0]:
            f = self.factors[x[j][0]]
            d -= f.norm(x[j][1]) + f.norm(y[j][1])
            d += f.dist(x[j][1], y[j][1])
        return d

    def vertex_key(self, v):
        return (self.norm(v), tuple((i, self.factors[i].vertex_key(e))
                                    for i, e in v))

    def step_generator(self, u, v):
        # adjacent vertices differ in at most the last syllable region
        for g in self._gens:
            if self.mul_gen(u, g) == v:
                return g
        raise DomainError("vertices are not adjacent")

    class _RightAcc:
        __slots__ = ("sp", "stack", "norm")

        def __init__(self, sp, start):
            self.sp = sp
            self.stack = [[i, e, sp.factors[i].norm(e)] for i, e in start]
            self.norm = sum(s[2] for s in self.stack)

        def push(self, g):
            i, ge = g
            s = self.stack
            if s and s[-1][0] == i:
                f = self.sp.factors[i]
                top = s[-1]
                merged = f.mul(top[1], ge)
                self.norm -= top[2]
                if f.is_identity(merged):
                    s.pop()
                else:
                    top[1] = merged
                    top[2] = f.norm(merged)
                    self.norm += top[2]
            else:
                s.append([i, ge, 1])
                self.norm += 1

        def value(self):
            return tuple((i, e) for i, e, _ in self.stack)

    class _LeftAcc:
        """Tracks w under w <- g*w; syllables stored reversed (head last)."""
        __slots__ = ("sp", "rstack", "norm")

        def __init__(self, sp, x):
            self.sp = sp
            self.rstack = [[i, e, sp.factors[i].norm(e)] for i, e in reversed(x)]
            self.norm = sum(s[2] for s in self.rstack)

        def push_front(self, g):
            i, ge = g
            s = self.rstack
            if s and s[-1][0] == i:
                f = self.sp.factors[i]
                top = s[-1]
                merged = f.mul(ge, top[1])
                self.norm -= top[2]
                if f.is_identity(merged):
                    s.pop()
                else:
                    top[1] = merged
                    top[2] = f.norm(merged)
                    self.norm += top[2]
            else:
                s.append([i, ge, 1])
                self.norm += 1

        def value(self):
            return tuple((i, e) for i, e, _ in reversed(self.rstack))

    def right_acc(self, start=None):
        return self._RightAcc(self, start if start is not None else ())

    def left_acc(self, x):
        return self._LeftAcc(self, x)

    def geodesic(self, x, y):
        z = self.mul(self.inv(x), y)
        letters = []
        for i, e in z:
            f = self.factors[i]
            for fg in f.geodesic(f.identity, e).step_letters():
                letters.append((i, fg))
        return PathSeg(self, start=x, letters=letters, q=1, Q=0)

    def parse_word(self, word):
        """Tokens 'f<i>:<gen>' or letters a,b for factor 0 / t for factor 1
        when the layout is the default grid(2) * free_group(1)."""
        acc = self.right_acc()
        shorthand = {}
        if (len(self.factors) == 2 and isinstance(self.factors[0], GridSpace)
                and self.factors[0].d == 2):
            shorthand = {"a": (0, (1, 0)), "A": (0, (-1, 0)),
                         "b": (0, (0, 1)), "B": (0, (0, -1))}
            f1 = self.factors[1]
            if isinstance(f1, FreeGroupSpace) and f1.k == 1:
                shorthand["t"] = (1, (1,))
                shorthand["T"] = (1, (-1,))
        for tok in word.split():
            if tok not in shorthand:
                raise DomainError(f"unknown generator {tok!r} for {self.kind}")
            acc.push(shorthand[tok])
        return acc.value()


# ---------------------------------------------------------------------------
# the loopy ray

class LoopyRaySpace(GraphSpace):
    """A geodesic ray with a loop for each 2 <= n <= N.

    Loop n is a circle of two arms, each of length n^2, attached to the ray
    at positions a_n and a_n + n (span n); the far point of the loop is the
    apex x_n.  Attachments a_2 = 4, a_{n+1} = a_n + n + 2 keep the spans
    disjoint with a one-vertex gap.  Vertices:

        ("r", k)          ray position k >= 0
        ("x", n)          apex of loop n
        ("a", n, s, j)    arm vertex, side s in {0,1}, 1 <= j <= n^2 - 1,
                          j = distance from the foot on that side
    """

    def __init__(self, N):
        if N < 2:
            raise DomainError(f"loopy_ray needs N >= 2, got {N}")
        self.N = N
        self.kind = f"loopy_ray({N})"
        self.attach = {}
        a = 4
        for n in range(2, N + 1):
            self.attach[n] = a
            a = a + n + 2
        self._foot = {}
        for n, an in self.attach.items():
            self._foot[an] = (n, 0)
            self._foot[an + n] = (n, 1)

    @property
    def basepoint(self):
        return ("r", 0)

    def apex(self, n):
        if not 2 <= n <= self.N:
            raise DomainError(f"no loop {n} in {self.kind}")
        return ("x", n)

    def ray_prefix(self, length):
        """The underlying geodesic ray gamma up to position `length`."""
        seg = PathSeg(self, vertices=[("r", k) for k in range(length + 1)],
                      q=1, Q=0)
        seg.dist_fn = lambda v: self._dist_to_ray(v, length)
        return seg

    def neighbors(self, v):
        out = []
        if v[0] == "r":
            k = v[1]
            if k > 0:
                out.append(("r", k - 1))
            out.append(("r", k + 1))
            if k in self._foot:
                n, side = self._foot[k]
                out.append(("a", n, side, 1))
        elif v[0] == "x":
            n = v[1]
            out.append(("a", n, 0, n * n - 1))
            out.append(("a", n, 1, n * n - 1))
        else:
            _, n, side, j = v
            an = self.attach[n]
            foot = ("r", an if side == 0 else an + n)
            out.append(foot if j == 1 else ("a", n, side, j - 1))
            out.append(("x", n) if j == n * n - 1 else ("a", n, side, j + 1))
        return out

    def _portals(self, v):
        """(ray position, cost) pairs through which v reaches the ray."""
        if v[0] == "r":
            return ((v[1], 0),)
        if v[0] == "x":
            n = v[1]
            an = self.attach[n]
            nn = n * n
            return ((an, nn), (an + n, nn))
        _, n, side, j = v
        an = self.attach[n]
        nn = n * n
        if side == 0:
            return ((an, j), (an + n, 2 * nn - j))
        return ((an, 2 * nn - j), (an + n, j))

    @staticmethod
    def _loop_coord(v):
        """Position along the loop circle, measured from foot 0."""
        if v[0] == "x":
            return v[1] * v[1]
        _, n, side, j = v
        return j if side == 0 else 2 * n * n - j

    def _loop_index(self, v):
        return v[1] if v[0] in ("x", "a") else None

    def dist(self, x, y):
        nx, ny = self._loop_index(x), self._loop_index(y)
        best = None
        if nx is not None and nx == ny:
            # direct route around the loop circle (the span side is covered
            # by the portal route below)
            best = abs(self._loop_coord(x) - self._loop_coord(y))
        for (px, cx) in self._portals(x):
            for (py, cy) in self._portals(y):
                d = cx + abs(px - py) + cy
                if best is None or d < best:
                    best = d
        return best

    def norm(self, v):
        return min(c + p for p, c in self._portals(v))

    def _dist_to_ray(self, v, length):
        best = None
        for p, c in self._portals(v):
            d = c + max(0, p - length)
            if best is None or d < best:
                best = d
        return best

    def vertex_key(self, v):
        return (self.norm(v), v)


# ---------------------------------------------------------------------------
# explicit graphs

class ExplicitGraphSpace(GraphSpace):
    """A finite graph given by an edge list; all oracles are BFS."""

    def __init__(self, edges, basepoint=None):
        adj = {}
        for u, v in edges:
            if u == v:
                continue
            adj.setdefault(u, set()).add(v)
            adj.setdefault(v, set()).add(u)
        if not adj:
            raise DomainError("empty edge list")
        self.adj = {u: sorted(vs) for u, vs in adj.items()}
        self._base = basepoint if basepoint is not None else min(self.adj)
        self.kind = f"edge_list({len(self.adj)} vertices)"
        # connectivity from the base point
        reach = self.ball(self._base, len(self.adj), cap=len(self.adj) + 1)
        if len(reach) != len(self.adj):
            raise DomainError("edge list graph is not connected")
        self._norms = reach

    @property
    def basepoint(self):
        return self._base

    def neighbors(self, v):
        return self.adj[v]

    def vertex_key(self, v):
        return (self._norms.get(v, 0), str(v))

    def norm(self, v):
        return self._norms[v]

    def dist(self, x, y):
        if x == y:
            return 0
        seen = {x: 0}
        frontier = deque([x])
        while frontier:
            u = frontier.popleft()
            for w in self.adj[u]:
                if w not in seen:
                    if w == y:
                        return seen[u] + 1
                    seen[w] = seen[u] + 1
                    frontier.append(w)
        raise DomainError("vertices are not connected")

    @classmethod
    def from_file(cls, path):
        edges = []
        with open(path) as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                u, v = line.split()
                edges.append((u, v))
        return cls(edges)


# ---------------------------------------------------------------------------
# spec parsing and the operation layer

def build_space(spec):
    """Instantiate a space from a spec string or pass through an instance.

    Grammar: ``free_group(k)``, ``grid(d)``, ``loopy_ray(N)``,
    ``free_product(<spec>, <spec>, ...)``, ``edge_list(<path>)``.
    """
    if isinstance(spec, GraphSpace):
        return spec
    s = spec.strip()
    head, _, rest = s.partition("(")
    head = head.strip()
    if not rest.endswith(")"):
        raise DomainError(f"malformed space spec {spec!r}")
    body = rest[:-1].strip()
    if head == "free_group":
        return FreeGroupSpace(int(body))
    if head == "grid":
        return GridSpace(int(body))
    if head == "loopy_ray":
        return LoopyRaySpace(int(body))
    if head == "edge_list":
        return ExplicitGraphSpace.from_file(body)
    if head == "free_product":
        parts = _split_args(body)
        return FreeProductSpace([build_space(p) for p in parts])
    raise DomainError(f"unknown space kind {head!r}")


def _split_args(body):
    parts, depth, cur = [], 0, []
    for ch in body:
        if ch == "," and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            depth += ch == "("
            depth -= ch == ")"
            cur.append(ch)
    if cur:
        parts.append("".join(cur).strip())
    return parts


def norm(sp, x):
    return sp.norm(x)


def geodesic_between(sp, x, y):
    return sp.geodesic(x, y)


def ball(sp, center, r, cap=DEFAULT_BALL_CAP):
    return sp.ball(center, r, cap=cap)


def enumerate_target(sp, Z):
    """The vertex list behind a projection target (PathSeg or iterable)."""
    if isinstance(Z, PathSeg):
        return Z.vertex_list()
    return list(Z)


def distances_along_path(sp, x, path):
    """d(x, v) for every vertex v of `path`, in one linear sweep.

    Uses the left accumulator on group spaces (each step of the path
    multiplies v^-1 x by one generator); falls back to per-vertex distance
    elsewhere.
    """
    if sp.is_group and isinstance(path, PathSeg) and path.letters is not None:
        acc = sp.left_acc(sp.mul(sp.inv(path.start), x))
        out = [acc.norm]
        inv = sp.inv
        for g in path.letters:
            acc.push_front(_gen_inverse(sp, g))
            out.append(acc.norm)
        return out
    vs = path.vertex_list() if isinstance(path, PathSeg) else list(path)
    return [sp.dist(x, v) for v in vs]


def _gen_inverse(sp, g):
    if isinstance(sp, FreeGroupSpace):
        return (-g[0],)
    if isinstance(sp, GridSpace):
        return tuple(-c for c in g)
    if isinstance(sp, FreeProductSpace):
        i, e = g
        return (i, sp.factors[i].inv(e))
    return sp.inv(g)


def distance_to_set(sp, x, Z):
    """Exact d(x, Z); honors a closed-form `dist_fn` on PathSeg targets."""
    if isinstance(Z, PathSeg):
        fn = getattr(Z, "dist_fn", None)
        if fn is not None:
            return fn(x)
        if sp.is_group and Z.letters is not None:
            return min(distances_along_path(sp, x, Z))
    vs = enumerate_target(sp, Z)
    if not vs:
        raise DomainError("empty projection target")
    return min(sp.dist(x, v) for v in vs)


def nearest_point_projection(sp, x, Z):
    """The full argmin set of d(x, .) over Z, sorted deterministically."""
    vs = enumerate_target(sp, Z)
    if not vs:
        raise DomainError("empty projection target")
    if isinstance(Z, PathSeg) and sp.is_group and Z.letters is not None:
        ds = distances_along_path(sp, x, Z)
    else:
        ds = [sp.dist(x, v) for v in vs]
    best = min(ds)
    out = sorted({v for v, d in zip(vs, ds) if d == best}, key=sp.vertex_key)
    return out


class QGCheck:
    """Result of a quasi-geodesic certification."""

    def __init__(self, ok, witness=None, margin=0.0):
        self.ok = ok
        self.witness = witness  # (s, t, d) of the worst violating pair
        self.margin = margin    # worst slack (negative margin == violation)

    def __bool__(self):
        return self.ok


def is_quasi_geodesic(path, q, Q, pair_budget=250_000, anchors=64):
    """Check (1/q)|s-t| - Q <= d(path(s), path(t)) <= q|s-t| + Q.

    Exhaustive over all index pairs while n(n-1)/2 fits the pair budget.
    Longer unit-speed paths on group spaces are checked by anchor sweeps:
    every pair (s, t) with s in an evenly spaced anchor set is verified via
    an O(length) incremental sweep, plus all adjacent pairs.  That keeps
    certification honest at scale without the quadratic blowup; small paths
    (every example in the test suite) are always checked exactly.
    """
    if q < 1 or Q < 0:
        raise DomainError(f"need q >= 1 and Q >= 0, got ({q}, {Q})")
    sp = path.sp
    n = len(path)
    if n <= 1:
        return QGCheck(True, margin=float("inf"))

    worst = [float("inf"), None]  # margin, witness

    def consider(s, t, d):
        gap = abs(s - t)
        hi = q * gap + Q - d
        lo = d - (gap / q - Q)
        m = min(hi, lo)
        if m < worst[0]:
            worst[0] = m
            worst[1] = (s, t, d)

    exhaustive = n * (n - 1) // 2 <= pair_budget
    if sp.is_group and path.letters is not None:
        letters = path.letters
        if exhaustive:
            starts = range(n - 1)
        else:
            step = max(1, (n - 1) // anchors)
            starts = sorted(set(range(0, n - 1, step)) | {n - 2})
        for s in starts:
            acc = sp.right_acc(sp.identity)
            for t in range(s + 1, n):
                acc.push(letters[t - 1])
                consider(s, t, acc.norm)
    else:
        vs = path.vertex_list()
        if exhaustive:
            pairs = itertools.combinations(range(n), 2)
        else:
            step = max(1, (n - 1) // anchors)
            anchor_set = sorted(set(range(0, n, step)) | {n - 1})
            pairs = ((s, t) for s in anchor_set for t in range(s + 1, n))
        for s, t in pairs:
            consider(s, t, sp.dist(vs[s], vs[t]))
        # adjacency is always checked on graph paths
        if path.is_graph_path:
            for s in range(n - 1):
                consider(s, s + 1, sp.dist(vs[s], vs[s + 1]))

    ok = worst[0] >= -1e-9
    return QGCheck(ok, witness=None if ok else worst[1], margin=worst[0])


def first_time_at_norm(path, r):
    """Least index t with ||path(t)|| == r; DomainError if never attained."""
    for i, nv in enumerate(path.norms()):
        if nv == r:
            return i
    raise DomainError(f"path never attains norm {r}")


def change_generators(sp, new_gens, radius=8, cap=200_000):
    """Compare the word metrics of two generating sets of the same group.

    Returns (wrapped space, measured (k, K)) where k is the worst mutual
    distortion max(d_old/d_new, d_new/d_old) over the radius-`radius` ball
    of the original graph.  new_gens must generate: BFS in the new graph
    has to reach every old generator.
    """
    if not isinstance(sp, (FreeGroupSpace, GridSpace)):
        raise DomainError("change_generators supports free_group and grid kinds")
    closure = set(new_gens) | {sp.inv(g) for g in new_gens}
    wrapped = _RegeneratedSpace(sp, sorted(closure, key=sp.vertex_key))
    probe = wrapped.ball(sp.identity, 2 * max(sp.norm(g) for g in closure) + 2,
                         cap=cap)
    for g in sp.gens:
        if g not in probe:
            raise DomainError("new set does not generate (old generator "
                              f"{g!r} unreachable at small radius)")
    old_ball = sp.ball(sp.identity, radius, cap=cap)
    k = 1.0
    for v, d_old in old_ball.items():
        if v == sp.identity:
            continue
        d_new = wrapped.norm(v)
        k = max(k, d_old / d_new, d_new / d_old)
    return wrapped, (k, 0)


class _RegeneratedSpace(GroupSpace):
    """The same group with a different symmetric generating set.

    There is no closed form for distances here; they are computed by
    memoized bidirectional BFS, which stays cheap at the small radii these
    comparison spaces are used at.
    """

    def __init__(self, base, gens):
        self.base = base
        self._gens = tuple(gens)
        self.kind = base.kind + "+regen"
        self._norm_memo = {base.identity: 0}

    @property
    def identity(self):
        return self.base.identity

    @property
    def gens(self):
        return self._gens

    def mul(self, x, y):
        return self.base.mul(x, y)

    def inv(self, x):
        return self.base.inv(x)

    def vertex_key(self, v):
        return self.base.vertex_key(v)

    def dist(self, x, y, budget=300_000):
        return self.norm(self.mul(self.inv(x), y), budget=budget)

    def norm(self, v, budget=300_000):
        got = self._norm_memo.get(v)
        if got is not None:
            return got
        # level-synchronized bidirectional BFS between identity and v;
        # keep expanding until the two explored radii certify the minimum
        side_a = {self.identity: 0}
        side_b = {v: 0}
        fa, fb = [self.identity], [v]
        depth_a = depth_b = 0
        best = None
        while True:
            if best is not None and depth_a + depth_b + 1 >= best:
                break
            if not fa and not fb:
                raise DomainError("unreachable vertex")
            if (len(fa) <= len(fb) and fa) or not fb:
                side, other, frontier = side_a, side_b, fa
                depth_a += 1
                depth = depth_a
            else:
                side, other, frontier = side_b, side_a, fb
                depth_b += 1
                depth = depth_b
            nxt = []
            for u in frontier:
                for g in self._gens:
                    w = self.mul(u, g)
                    if w in other:
                        cand = depth + other[w]
                        if best is None or cand < best:
                            best = cand
                    if w not in side:
                        side[w] = depth
                        nxt.append(w)
            frontier[:] = nxt
            if len(side_a) + len(side_b) > budget:
                raise DomainError("distance BFS budget exceeded")
            if depth_a + depth_b > 64:
                raise DomainError("distance search too deep")
        self._norm_memo[v] = best
        return best


def self_check(sp, radius=4, cap=DEFAULT_BALL_CAP, rng=None):
    """Light invariant audit on a small ball: symmetry of the neighbor
    relation, metric axioms on sampled triples, and norm consistency."""
    import random
    rng = rng or random.Random(0)
    b = sp.ball(sp.basepoint, radius, cap=cap)
    verts = sorted(b, key=sp.vertex_key)
    for v in verts:
        for w in sp.neighbors(v):
            assert v in sp.neighbors(w), f"asymmetric edge {v!r} ~ {w!r}"
        assert sp.norm(v) == b[v], f"norm mismatch at {v!r}"
    for _ in range(200):
        x, y, z = (rng.choice(verts) for _ in range(3))
        dxy, dyx = sp.dist(x, y), sp.dist(y, x)
        assert dxy == dyx, f"asymmetric metric on {x!r}, {y!r}"
        assert sp.dist(x, z) <= dxy + sp.dist(y, z), "triangle inequality"
        assert (dxy == 0) == (x == y)
    return True


# ---------------------------------------------------------------------------
# axis rays with fast distance oracles

def axis_ray(sp, length, gen=None):
    """The ray g, g^2, ..., g^length as a PathSeg with fast distance oracles.

    `gen` defaults to the first generator.  The returned path carries
    ``dist_fn(x)`` (exact distance from a vertex to the ray prefix) and
    ``dist_along(path)`` (the same for every vertex of a unit-speed path in
    one linear sweep); both exist in closed form for free groups, grids and
    free products whose chosen generator spans a free-group factor.
    """
    if not sp.is_group:
        raise DomainError("axis_ray needs a group space")
    g = gen if gen is not None else sp.gens[0]
    seg = PathSeg(sp, start=sp.identity, letters=[g] * length, q=1, Q=0)

    if isinstance(sp, FreeGroupSpace):
        letter = g[0]

        def dist_fn(x, _l=letter, _L=length):
            m = 0
            for c in x:
                if c != _l:
                    break
                m += 1
            return len(x) - min(m, _L)

        def dist_along(path, _l=letter, _L=length):
            out = []
            stack = []
            m = 0  # leading run of _l in the current reduced word
            start = path.start
            letters = ([(c,) for c in start] + list(path.letters)
                       if path.letters is not None
                       else [(c,) for c in start] + path.step_letters())
            base = len(start)
            for k, gg in enumerate(letters):
                c = gg[0]
                if stack and stack[-1] == -c:
                    stack.pop()
                    if len(stack) < m:
                        m = len(stack)
                else:
                    if len(stack) == m and c == _l:
                        m += 1
                    stack.append(c)
                if k >= base - 1:
                    out.append(len(stack) - min(m, _L))
            if base == 0:
                out.insert(0, 0)
            return out

        seg.dist_fn = dist_fn
        seg.dist_along = dist_along
        return seg

    if isinstance(sp, FreeProductSpace):
        fi, fe = g
        factor = sp.factors[fi]
        if not (isinstance(factor, FreeGroupSpace) and factor.k == 1
                and fe == (1,)):
            return seg  # no closed form; generic sweeps still apply

        def head_excess(first_syl, _L=length):
            """Distance saved by entering the axis through the head syllable."""
            if first_syl is None:
                return 0
            i, e = first_syl
            if i != fi or e[0] != 1:
                return 0
            return min(len(e), _L)

        def dist_fn(x, _L=length):
            first = x[0] if x else None
            return sp.norm(x) - head_excess(first, _L)

        def dist_along(path, _L=length):
            acc = sp.right_acc(path.start)
            letters = (path.letters if path.letters is not None
                       else path.step_letters())
            first = acc.stack[0] if acc.stack else None
            out = [acc.norm - head_excess((first[0], first[1]) if first else None, _L)]
            for gg in letters:
                acc.push(gg)
                s = acc.stack
                first = (s[0][0], s[0][1]) if s else None
                out.append(acc.norm - head_excess(first, _L))
            return out

        seg.dist_fn = dist_fn
        seg.dist_along = dist_along
        return seg

    if isinstance(sp, GridSpace):
        axis = next(i for i, c in enumerate(g) if c != 0)
        sign = 1 if g[axis] > 0 else -1

        def dist_fn(x, _L=length):
            along = x[axis] * sign
            off = sum(abs(c) for i, c in enumerate(x) if i != axis)
            if along < 0:
                return off - along
            if along > _L:
                return off + along - _L
            return off

        seg.dist_fn = dist_fn
        seg.dist_along = lambda path: [dist_fn(v) for v in path.vertex_list()]
        return seg

    return seg
