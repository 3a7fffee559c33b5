"""Joint-space RRT-Connect with shortcut smoothing."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from skillgen.errors import PlanFailure
from skillgen.world.model import CollisionScene


@dataclass(frozen=True)
class PlanRequest:
    start_q: np.ndarray
    goal_q: np.ndarray
    scene: CollisionScene  # world snapshot with ignore pairs and any held body
    step_size: float = 0.1
    max_iterations: int = 5000
    validity_resolution: float = 0.02
    shortcut_attempts: int = 50

    def __post_init__(self):
        object.__setattr__(self, "start_q", np.asarray(self.start_q, dtype=float))
        object.__setattr__(self, "goal_q", np.asarray(self.goal_q, dtype=float))
        if self.step_size <= 0 or self.validity_resolution <= 0:
            raise ValueError("step size and validity resolution must be positive")


class _Tree:
    def __init__(self, root: np.ndarray, capacity: int):
        self.nodes = np.empty((capacity, root.size))
        self.parent = np.empty(capacity, dtype=int)
        self.nodes[0] = root
        self.parent[0] = -1
        self.size = 1

    def add(self, q, parent: int) -> int:
        if self.size == len(self.nodes):
            self.nodes = np.concatenate([self.nodes, np.empty_like(self.nodes)])
            self.parent = np.concatenate([self.parent, np.empty_like(self.parent)])
        self.nodes[self.size] = q
        self.parent[self.size] = parent
        self.size += 1
        return self.size - 1

    def nearest(self, q) -> int:
        d = self.nodes[:self.size] - q
        return int(np.argmin(np.einsum("ij,ij->i", d, d)))

    def path_to_root(self, i: int) -> list:
        out = []
        while i >= 0:
            out.append(self.nodes[i].copy())
            i = int(self.parent[i])
        return out


def _free_prefix(scene: CollisionScene, qa, qb, step: float, resolution: float):
    """Steps of length `step` from qa toward qb that are collision-free.

    The whole line is checked in one batch; returns the list of reachable
    intermediate nodes (excluding qa) and whether qb itself was reached.
    """
    dist = float(np.linalg.norm(qb - qa))
    if dist < 1e-12:
        return [], True
    n_nodes = max(1, math.ceil(dist / step))
    # checks land on every node so nodes are always validated exactly
    n_checks = n_nodes * max(1, math.ceil(dist / n_nodes / resolution))
    s = np.arange(1, n_checks + 1) / n_checks
    bad = scene.in_collision(qa[None] + s[:, None] * (qb - qa)[None])
    first_bad = int(np.argmax(bad)) if bad.any() else n_checks
    free_frac = first_bad / n_checks  # fraction of the line known collision-free
    nodes = []
    for k in range(1, n_nodes + 1):
        f = k / n_nodes
        if f > free_frac + 1e-12:
            break
        nodes.append(qa + f * (qb - qa))
    return nodes, len(nodes) == n_nodes


def _extend(tree: _Tree, q_rand, req: PlanRequest, greedy: bool):
    """Grow the tree toward q_rand; one step, or as far as possible when greedy."""
    i = tree.nearest(q_rand)
    q_near = tree.nodes[i].copy()
    target = q_rand
    if not greedy:
        d = float(np.linalg.norm(q_rand - q_near))
        if d > req.step_size:
            target = q_near + (q_rand - q_near) * (req.step_size / d)
    nodes, reached = _free_prefix(req.scene, q_near, target, req.step_size, req.validity_resolution)
    for q in nodes:
        i = tree.add(q, i)
    if not nodes and not reached:
        return None, False
    return i, reached and np.allclose(target, q_rand)


def path_length(path) -> float:
    path = np.asarray(path, dtype=float)
    if len(path) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1)))


def densify(path, step_size: float) -> np.ndarray:
    """Insert evenly spaced configurations so consecutive ones are within step_size."""
    path = np.asarray(path, dtype=float)
    if len(path) < 2:
        return path.copy()
    out = [path[0]]
    for a, b in zip(path[:-1], path[1:]):
        n = max(1, math.ceil(np.linalg.norm(b - a) / step_size - 1e-9))
        for k in range(1, n):
            out.append(a + (k / n) * (b - a))
        out.append(b)  # exact endpoint, not a + 1.0 * (b - a)
    return np.array(out)


def path_valid(scene: CollisionScene, path, resolution: float) -> bool:
    """Every edge of the path, sampled at `resolution`, is collision-free."""
    path = np.asarray(path, dtype=float)
    if len(path) == 1:
        return not bool(scene.in_collision(path)[0])
    chunks = []
    for a, b in zip(path[:-1], path[1:]):
        n = max(1, math.ceil(np.linalg.norm(b - a) / resolution))
        s = np.arange(n + 1) / n
        chunks.append(a[None] + s[:, None] * (b - a)[None])
    return not bool(scene.in_collision(np.concatenate(chunks)).any())


def shortcut(path, scene: CollisionScene, rng: np.random.Generator, attempts: int,
             resolution: float) -> np.ndarray:
    """Random shortcutting: replace sub-paths with straight valid edges.

    By the triangle inequality no replacement can lengthen the path.
    """
    path = [np.asarray(q, dtype=float) for q in path]
    for _ in range(attempts):
        if len(path) < 3:
            break
        i, j = sorted(rng.choice(len(path), size=2, replace=False))
        if j - i < 2:
            continue
        if scene.edge_valid(path[i], path[j], resolution):
            path = path[:i + 1] + path[j:]
    return np.array(path)


def rrt_connect(req: PlanRequest, rng: np.random.Generator) -> np.ndarray:
    """Collision-free joint path from start to goal, densified to step_size.

    Raises PlanFailure when an endpoint is invalid or the iteration budget
    runs out.
    """
    robot = req.scene.robot
    start, goal = req.start_q, req.goal_q
    for name, q in (("start", start), ("goal", goal)):
        if not robot.within_limits(q):
            raise PlanFailure(f"{name} configuration violates joint limits")
        if req.scene.in_collision(q[None])[0]:
            raise PlanFailure(f"{name} configuration is in collision")
    if np.array_equal(start, goal):
        return start[None].copy()
    if req.scene.edge_valid(start, goal, req.validity_resolution):
        path = densify([start, goal], req.step_size)
        if path_valid(req.scene, path, req.validity_resolution):
            return path
    cap = min(req.max_iterations * 8 + 2, 4096)
    ta, tb = _Tree(start, cap), _Tree(goal, cap)
    a_is_start = True
    for _ in range(req.max_iterations):
        q_rand = rng.uniform(robot.lower, robot.upper)
        i_new, _ = _extend(ta, q_rand, req, greedy=False)
        if i_new is not None:
            j, reached = _extend(tb, ta.nodes[i_new].copy(), req, greedy=True)
            if reached:
                pa = ta.path_to_root(i_new)[::-1]
                pb = tb.path_to_root(j)
                # tb's last node equals ta's new node; drop the duplicate
                path = pa + pb[1:]
                if not a_is_start:
                    path = path[::-1]
                path[0], path[-1] = start.copy(), goal.copy()
                path = shortcut(path, req.scene, rng, req.shortcut_attempts,
                                req.validity_resolution)
                path = densify(path, req.step_size)
                if not path_valid(req.scene, path, req.validity_resolution):
                    raise PlanFailure("densified path failed final validation")
                return path
        if tb.size < ta.size:
            ta, tb = tb, ta
            a_is_start = not a_is_start
    raise PlanFailure(f"RRT-Connect found no path within {req.max_iterations} iterations")
