"""Genetic programming over behavior trees: constrained mutation and
crossover seeded by the planner's output. Every operator is rejection-
sampled so offspring always satisfy the structural constraints and never
edit or remove locked nodes; operators that cannot find a valid edit
return their input unchanged.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

from .tree import (ACTION_KINDS, CONDITION_KINDS, CONTROL_KINDS, FALLBACK,
                   SEQUENCE, BehaviorTree, Node, NodeParams, insert_child,
                   leaf as make_leaf, metrics, preorder, remove_node,
                   replace_node, rewrite, trees_equal, validate)


@dataclass(frozen=True)
class GpConfig:
    population_size: int = 32
    elitism_count: int = 4
    tournament_size: int = 3
    p_mutation: float = 0.8
    p_crossover: float = 0.4
    structure_allowed: bool = True
    max_retries: int = 20
    offset_sigma: float = 0.05   # meters
    angle_sigma: float = 0.1     # radians

    def __post_init__(self):
        if self.elitism_count >= self.population_size:
            raise ValueError("elitism_count must be below population_size")
        for p in (self.p_mutation, self.p_crossover):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")


@dataclass
class Individual:
    tree: BehaviorTree
    fitness: float
    solved: bool

    def key(self) -> tuple:
        return (self.fitness, self.solved)


@dataclass(frozen=True)
class Palette:
    """Scenario vocabulary for generating random leaves."""
    movables: tuple[str, ...]
    objects: tuple[str, ...]
    containers: tuple[str, ...]
    leaf_kinds: tuple[str, ...]

    @classmethod
    def from_world(cls, world) -> "Palette":
        allowed = world.allowed_nodes or (CONDITION_KINDS + ACTION_KINDS)
        return cls(
            movables=tuple(sorted(world.movable_ids())),
            objects=tuple(sorted(world.objects)),
            containers=tuple(sorted(world.container_ids())),
            leaf_kinds=tuple(k for k in CONDITION_KINDS + ACTION_KINDS
                             if k in allowed),
        )


# ---------------------------------------------------------------------------
# helpers

def _fresh_id(rng: random.Random, used: set[str]) -> str:
    while True:
        nid = f"m{rng.getrandbits(32):08x}"
        if nid not in used:
            used.add(nid)
            return nid


def _contains_locked(node: Node) -> bool:
    return any(n.locked for n in preorder(node))


def _locked_signature(tree: BehaviorTree) -> tuple:
    return tuple(sorted((n.node_id, n.kind, n.params.rounded_key())
                        for n in preorder(tree.root) if n.locked))


def _parents(tree: BehaviorTree) -> dict[str, Node]:
    out = {}
    for node in preorder(tree.root):
        for child in node.children:
            out[child.node_id] = node
    return out


def _reassign_ids(node: Node, rng: random.Random, used: set[str]) -> Node:
    kids = tuple(_reassign_ids(c, rng, used) for c in node.children)
    return replace(node, node_id=_fresh_id(rng, used), children=kids)


def _acceptable(candidate: BehaviorTree, source: BehaviorTree) -> bool:
    if validate(candidate):
        return False
    for node in preorder(candidate.root):
        if node.is_control and not node.children:
            return False
    return _locked_signature(candidate) == _locked_signature(source)


def _random_params(kind: str, rng: random.Random, palette: Palette) -> dict:
    target = rng.choice(palette.movables) if palette.movables else None
    out = {"target": target}
    if kind in ("in?", "place_in!"):
        out["relative"] = rng.choice(palette.containers) if palette.containers else None
    elif kind in ("at_pos?", "place!"):
        out["relative"] = rng.choice(palette.objects)
    if kind in ("at_pos?", "place!"):
        out["offset"] = (rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6),
                         rng.uniform(0.0, 0.15))
    elif kind in ("robot_at?", "move_to!"):
        out["offset"] = (rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8))
    if kind in ("at_pos?", "robot_at?", "place!", "move_to!"):
        out["angle"] = rng.uniform(-math.pi, math.pi)
    return out


def _random_leaf(rng: random.Random, palette: Palette, used: set[str]) -> Node:
    kind = rng.choice(palette.leaf_kinds)
    kw = _random_params(kind, rng, palette)
    return make_leaf(kind, node_id=_fresh_id(rng, used), **kw)


# ---------------------------------------------------------------------------
# mutation

def _perturb_params(tree: BehaviorTree, cfg: GpConfig, rng: random.Random,
                    palette: Palette) -> Optional[BehaviorTree]:
    candidates = [n for n in preorder(tree.root)
                  if n.is_leaf and not n.locked
                  and (n.params.offset is not None or n.params.angle is not None
                       or n.params.target_object is not None)]
    if not candidates:
        return None
    node = rng.choice(candidates)
    p = node.params
    choices = []
    if p.offset is not None:
        choices.append("offset")
    if p.angle is not None:
        choices.append("angle")
    if p.target_object is not None:
        choices.append("objects")
    what = rng.choice(choices)
    if what == "offset":
        new = replace(p, offset=tuple(v + rng.gauss(0.0, cfg.offset_sigma)
                                      for v in p.offset))
    elif what == "angle":
        new = replace(p, angle=p.angle + rng.gauss(0.0, cfg.angle_sigma))
    else:
        kw = _random_params(node.kind, rng, palette)
        new = replace(p, target_object=kw.get("target") or p.target_object,
                      relative_object=(kw.get("relative")
                                       if p.relative_object is not None else None))
    return replace_node(tree, node.node_id, replace(node, params=new))


def _insert_node(tree: BehaviorTree, rng: random.Random, palette: Palette,
                 used: set[str]) -> Optional[BehaviorTree]:
    controls = [n for n in preorder(tree.root) if n.is_control]
    parent = rng.choice(controls)
    index = rng.randint(0, len(parent.children))
    child = _random_leaf(rng, palette, used)
    if rng.random() < 0.3:
        wrapper = SEQUENCE if parent.kind == FALLBACK else FALLBACK
        child = Node(wrapper, _fresh_id(rng, used), children=(child,))
    return insert_child(tree, parent.node_id, index, child)


def _delete_node(tree: BehaviorTree, rng: random.Random) -> Optional[BehaviorTree]:
    parents = _parents(tree)
    candidates = [n for n in preorder(tree.root)
                  if n.node_id != tree.root.node_id
                  and not _contains_locked(n)
                  and len(parents[n.node_id].children) >= 2]
    if not candidates:
        return None
    return remove_node(tree, rng.choice(candidates).node_id)


def _replace_random(tree: BehaviorTree, rng: random.Random, palette: Palette,
                    used: set[str]) -> Optional[BehaviorTree]:
    candidates = [n for n in preorder(tree.root) if not n.locked]
    if not candidates:
        return None
    node = rng.choice(candidates)
    if node.is_control:
        flipped = SEQUENCE if node.kind == FALLBACK else FALLBACK
        return replace_node(tree, node.node_id, replace(node, kind=flipped))
    return replace_node(tree, node.node_id, _random_leaf(rng, palette, used))


def _move_subtree(tree: BehaviorTree, rng: random.Random) -> Optional[BehaviorTree]:
    parents = _parents(tree)
    movable = [n for n in preorder(tree.root)
               if n.node_id != tree.root.node_id
               and not _contains_locked(n)
               and len(parents[n.node_id].children) >= 2]
    if not movable:
        return None
    node = rng.choice(movable)
    pruned = remove_node(tree, node.node_id)
    controls = [n for n in preorder(pruned.root) if n.is_control]
    if not controls:
        return None
    parent = rng.choice(controls)
    index = rng.randint(0, len(parent.children))
    return insert_child(pruned, parent.node_id, index, node)


def mutate(tree: BehaviorTree, cfg: GpConfig, rng: random.Random,
           palette: Palette) -> BehaviorTree:
    """One constrained mutation; returns the input tree when no valid edit
    is found within the retry budget (a total function).
    """
    for _ in range(cfg.max_retries):
        used = set(tree.node_ids())
        if not cfg.structure_allowed:
            candidate = _perturb_params(tree, cfg, rng, palette)
        else:
            roll = rng.random()
            if roll < 0.5:
                candidate = _perturb_params(tree, cfg, rng, palette)
            elif roll < 0.7:
                candidate = _insert_node(tree, rng, palette, used)
            elif roll < 0.82:
                candidate = _delete_node(tree, rng)
            elif roll < 0.92:
                candidate = _replace_random(tree, rng, palette, used)
            else:
                candidate = _move_subtree(tree, rng)
        if candidate is not None and _acceptable(candidate, tree):
            return candidate
    return tree


def crossover(a: BehaviorTree, b: BehaviorTree, rng: random.Random
              ) -> tuple[BehaviorTree, BehaviorTree]:
    """Exchange two unlocked subtrees; transplanted nodes get fresh ids.
    Falls back to the parents when no valid exchange is found.
    """
    subtrees_a = [n for n in preorder(a.root)
                  if n.node_id != a.root.node_id and not _contains_locked(n)]
    subtrees_b = [n for n in preorder(b.root)
                  if n.node_id != b.root.node_id and not _contains_locked(n)]
    if not subtrees_a or not subtrees_b:
        return a, b
    # self-crossover must be a no-op up to ids: equal parents share the point
    aligned = (len(subtrees_a) == len(subtrees_b)
               and trees_equal(a, b, ignore_ids=True))
    for _ in range(20):
        ia = rng.randrange(len(subtrees_a))
        ib = ia if aligned else rng.randrange(len(subtrees_b))
        sa = subtrees_a[ia]
        sb = subtrees_b[ib]
        used_a = set(a.node_ids())
        used_b = set(b.node_ids())
        try:
            new_a = replace_node(a, sa.node_id, _reassign_ids(sb, rng, used_a))
            new_b = replace_node(b, sb.node_id, _reassign_ids(sa, rng, used_b))
        except Exception:
            continue
        if _acceptable(new_a, a) and _acceptable(new_b, b):
            return new_a, new_b
    return a, b


# ---------------------------------------------------------------------------
# population machinery

FitnessFn = Callable[[BehaviorTree], tuple[float, bool]]


def seed_population(seed_tree: BehaviorTree, cfg: GpConfig, rng: random.Random,
                    palette: Palette) -> list[BehaviorTree]:
    """The seed verbatim plus mutated variants, all constraint-valid."""
    population = [seed_tree]
    while len(population) < cfg.population_size:
        population.append(mutate(seed_tree, cfg, rng, palette))
    return population


def evaluate(trees: Sequence[BehaviorTree], fitness_fn: FitnessFn) -> list[Individual]:
    out = []
    for tree in trees:
        fitness, solved = fitness_fn(tree)
        out.append(Individual(tree, fitness, solved))
    return out


def best_of(population: Sequence[Individual]) -> Individual:
    return max(population, key=Individual.key)


def _tournament(pool: Sequence[Individual], size: int, rng: random.Random) -> Individual:
    k = min(size, len(pool))
    picks = [pool[rng.randrange(len(pool))] for _ in range(k)]
    return max(picks, key=Individual.key)


def evolve_step(population: list[Individual], cfg: GpConfig, rng: random.Random,
                palette: Palette, fitness_fn: FitnessFn) -> list[Individual]:
    """One generation: elites survive unchanged; the rest of the next
    population is tournament-selected from freshly evaluated offspring.
    """
    ranked = sorted(population, key=Individual.key, reverse=True)
    elites = ranked[:cfg.elitism_count]
    offspring_trees: list[BehaviorTree] = []
    while len(offspring_trees) < cfg.population_size:
        pa = _tournament(population, cfg.tournament_size, rng)
        pb = _tournament(population, cfg.tournament_size, rng)
        ta, tb = pa.tree, pb.tree
        if cfg.structure_allowed and rng.random() < cfg.p_crossover:
            ta, tb = crossover(ta, tb, rng)
        for t in (ta, tb):
            if rng.random() < cfg.p_mutation:
                t = mutate(t, cfg, rng, palette)
            offspring_trees.append(t)
            if len(offspring_trees) >= cfg.population_size:
                break
    offspring = evaluate(offspring_trees, fitness_fn)
    rest = [_tournament(offspring, cfg.tournament_size, rng)
            for _ in range(cfg.population_size - len(elites))]
    return elites + rest
