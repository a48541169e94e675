"""Plaintext decision-tree and boosted-ensemble models.

Trees are ingested from a JSON document, validated, fixed-point encoded,
and padded to complete binary shape with dummy nodes so the topology leaks
nothing beyond the height. Plaintext evaluators in this module double as
oracles for the encrypted pipeline.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import cached_property

from .compare import FixedPointSpec, scale_fixed
from .errors import DomainError, IngestionError
from .params import MAX_TREE_HEIGHT

KIND_THRESHOLD = "threshold"
KIND_MEMBER = "member"

FEATURE_NUMERIC = "numeric"
FEATURE_CATEGORICAL = "categorical"


@dataclass(frozen=True)
class DecisionNode:
    """One internal test: feature index (1-based) plus threshold or set."""

    feature: int
    kind: str
    threshold: int | None = None
    members: tuple[int, ...] | None = None


@dataclass(frozen=True)
class LeafNode:
    label: int


@dataclass(frozen=True)
class TreeNode:
    test: DecisionNode
    left: "TreeNode | LeafNode"
    right: "TreeNode | LeafNode"


@dataclass(frozen=True)
class DecisionTree:
    root: TreeNode | LeafNode
    n: int
    t: int
    frac_bits: int
    feature_kinds: tuple[str, ...]

    @property
    def spec(self) -> FixedPointSpec:
        return FixedPointSpec(self.t, self.frac_bits)

    @cached_property
    def height(self) -> int:
        def depth(node) -> int:
            if isinstance(node, LeafNode):
                return 0
            return 1 + max(depth(node.left), depth(node.right))

        return depth(self.root)

    @cached_property
    def m(self) -> int:
        def count(node) -> int:
            if isinstance(node, LeafNode):
                return 0
            return 1 + count(node.left) + count(node.right)

        return count(self.root)

    @property
    def k(self) -> int:
        return self.m + 1

    @cached_property
    def is_complete(self) -> bool:
        h = self.height
        return self.m == (1 << h) - 1

    def level_nodes(self) -> list[DecisionNode]:
        """Internal nodes in heap order (node j has children 2j, 2j+1)."""
        self._require_complete()
        out = []
        queue = [self.root]
        while queue:
            node = queue.pop(0)
            if isinstance(node, LeafNode):
                continue
            out.append(node.test)
            queue.append(node.left)
            queue.append(node.right)
        return out

    def level_leaves(self) -> list[int]:
        """Leaf labels left to right."""
        self._require_complete()
        depth_target = self.height
        out = []

        def walk(node, depth):
            if isinstance(node, LeafNode):
                assert depth == depth_target
                out.append(node.label)
                return
            walk(node.left, depth + 1)
            walk(node.right, depth + 1)

        walk(self.root, 0)
        return out

    def _require_complete(self):
        if not self.is_complete:
            raise DomainError("operation requires a complete tree; pad first")


def derive_feature_kinds(nodes, n: int) -> tuple[str, ...]:
    """Per-feature test kind; a feature tested both ways is rejected."""
    kinds: list[str | None] = [None] * n
    for node in nodes:
        want = FEATURE_CATEGORICAL if node.kind == KIND_MEMBER else FEATURE_NUMERIC
        have = kinds[node.feature - 1]
        if have is not None and have != want:
            raise IngestionError(
                f"feature {node.feature} is tested both numerically and as a set"
            )
        kinds[node.feature - 1] = want
    return tuple(k or FEATURE_NUMERIC for k in kinds)


def _iter_nodes(root):
    stack = [root]
    while stack:
        node = stack.pop()
        if isinstance(node, LeafNode):
            continue
        yield node.test
        stack.append(node.left)
        stack.append(node.right)


def encode_label(value, frac_bits: int) -> int:
    return round(Fraction(value) * (1 << frac_bits))


# -- ingestion ---------------------------------------------------------------


def load_tree(document: dict) -> DecisionTree:
    """Parse and validate a tree document; values are fixed-point encoded.

    Child references are node ids (integers) or strings "leaf:<id>". The
    result is not necessarily complete.
    """
    if not isinstance(document, dict):
        raise IngestionError("document must be a JSON object")
    n = _req_int(document, "n", "")
    t = _req_int(document, "t", "")
    frac_bits = _req_int(document, "frac_bits", "")
    if n < 1:
        raise IngestionError("must be >= 1", "n")
    if not 0 <= frac_bits < t:
        raise IngestionError("need 0 <= frac_bits < t", "frac_bits")
    spec = FixedPointSpec(t, frac_bits)

    raw_nodes = document.get("nodes")
    raw_leaves = document.get("leaves")
    if not isinstance(raw_nodes, list) or not raw_nodes:
        raise IngestionError("must be a non-empty list", "nodes")
    if not isinstance(raw_leaves, list) or not raw_leaves:
        raise IngestionError("must be a non-empty list", "leaves")

    leaves: dict[int, LeafNode] = {}
    for i, doc in enumerate(raw_leaves):
        path = f"leaves[{i}]"
        lid = _req_int(doc, "id", path)
        if lid in leaves:
            raise IngestionError(f"duplicate leaf id {lid}", path)
        if "label" not in doc:
            raise IngestionError("missing label", path)
        leaves[lid] = LeafNode(label=encode_label(doc["label"], frac_bits))

    tests: dict[int, DecisionNode] = {}
    children: dict[int, tuple] = {}
    for i, doc in enumerate(raw_nodes):
        path = f"nodes[{i}]"
        nid = _req_int(doc, "id", path)
        if nid in tests:
            raise IngestionError(f"duplicate node id {nid}", path)
        feature = _req_int(doc, "feature", path)
        if not 1 <= feature <= n:
            raise IngestionError(
                f"feature index {feature} outside [1, {n}]", f"{path}.feature"
            )
        kind = doc.get("kind", KIND_THRESHOLD)
        if kind == KIND_THRESHOLD:
            if doc.get("threshold") is None:
                raise IngestionError("threshold node without threshold", path)
            try:
                threshold = scale_fixed(doc["threshold"], spec)
            except DomainError as exc:
                raise IngestionError(str(exc), f"{path}.threshold") from None
            tests[nid] = DecisionNode(feature=feature, kind=kind, threshold=threshold)
        elif kind == KIND_MEMBER:
            raw_set = doc.get("set")
            if not isinstance(raw_set, list) or not raw_set:
                raise IngestionError("member node needs a non-empty set", path)
            members = []
            for value in raw_set:
                if not isinstance(value, int) or isinstance(value, bool):
                    raise IngestionError(
                        "category codes must be integers", f"{path}.set"
                    )
                if not 0 <= value < (1 << t):
                    raise IngestionError(
                        f"category code {value} does not fit {t} bits",
                        f"{path}.set",
                    )
                members.append(value)
            if len(set(members)) != len(members):
                raise IngestionError("set elements must be distinct", f"{path}.set")
            tests[nid] = DecisionNode(
                feature=feature, kind=kind, members=tuple(members)
            )
        else:
            raise IngestionError(f"unknown test kind {kind!r}", f"{path}.kind")
        children[nid] = (doc.get("left"), doc.get("right"))

    def resolve(ref, path):
        if isinstance(ref, int) and not isinstance(ref, bool):
            if ref not in tests:
                raise IngestionError(f"unknown node id {ref}", path)
            return ("node", ref)
        if isinstance(ref, str) and ref.startswith("leaf:"):
            try:
                lid = int(ref[5:])
            except ValueError:
                raise IngestionError(f"bad leaf reference {ref!r}", path) from None
            if lid not in leaves:
                raise IngestionError(f"unknown leaf id {lid}", path)
            return ("leaf", lid)
        raise IngestionError(f"bad child reference {ref!r}", path)

    refs: dict[int, tuple] = {}
    referenced_nodes: set[int] = set()
    referenced_leaves: set[int] = set()
    for i, (nid, (left, right)) in enumerate(children.items()):
        path = f"nodes[{i}]"
        lref = resolve(left, f"{path}.left")
        rref = resolve(right, f"{path}.right")
        refs[nid] = (lref, rref)
        for kind_ref, rid in (lref, rref):
            if kind_ref == "node":
                if rid in referenced_nodes:
                    raise IngestionError(f"node {rid} has two parents", path)
                referenced_nodes.add(rid)
            else:
                if rid in referenced_leaves:
                    raise IngestionError(f"leaf {rid} has two parents", path)
                referenced_leaves.add(rid)

    roots = set(tests) - referenced_nodes
    if len(roots) != 1:
        raise IngestionError(f"expected exactly one root, found {len(roots)}", "nodes")
    root_id = roots.pop()

    built: dict[int, TreeNode] = {}

    def build(nid, seen, depth):
        if nid in seen:
            raise IngestionError(f"cycle through node {nid}", "nodes")
        if depth > MAX_TREE_HEIGHT:
            raise IngestionError(f"tree deeper than {MAX_TREE_HEIGHT}", "nodes")
        seen = seen | {nid}
        (lkind, lid), (rkind, rid) = refs[nid]
        left = leaves[lid] if lkind == "leaf" else build(lid, seen, depth + 1)
        right = leaves[rid] if rkind == "leaf" else build(rid, seen, depth + 1)
        node = TreeNode(test=tests[nid], left=left, right=right)
        built[nid] = node
        return node

    root = build(root_id, frozenset(), 1)
    if len(built) != len(tests):
        unreachable = sorted(set(tests) - set(built))
        raise IngestionError(f"unreachable nodes {unreachable}", "nodes")
    if len(referenced_leaves) != len(leaves):
        unreachable = sorted(set(leaves) - referenced_leaves)
        raise IngestionError(f"unreachable leaves {unreachable}", "leaves")

    kinds = derive_feature_kinds(_iter_nodes(root), n)
    return DecisionTree(
        root=root, n=n, t=t, frac_bits=frac_bits, feature_kinds=kinds
    )


def _req_int(doc, key, path):
    where = f"{path}.{key}" if path else key
    if not isinstance(doc, dict) or key not in doc:
        raise IngestionError("missing required field", where)
    value = doc[key]
    if not isinstance(value, int) or isinstance(value, bool):
        raise IngestionError("must be an integer", where)
    return value


# -- padding -----------------------------------------------------------------


def pad_complete(tree: DecisionTree, target_h: int) -> DecisionTree:
    """Pad to a complete binary tree of height ``target_h``.

    Every leaf sitting above the target depth is replaced by a dummy
    decision node whose two children duplicate the original leaf, so the
    evaluated label is unchanged for every input.
    """
    if target_h > MAX_TREE_HEIGHT:
        raise DomainError(f"target height {target_h} exceeds {MAX_TREE_HEIGHT}")
    if tree.height > target_h:
        raise DomainError(
            f"tree of height {tree.height} cannot be padded to {target_h}"
        )
    dummy = DecisionNode(
        feature=1, kind=KIND_THRESHOLD, threshold=scale_fixed(0, tree.spec)
    )

    def extend(node, depth):
        if isinstance(node, LeafNode):
            if depth == target_h:
                return node
            child = extend(node, depth + 1)
            return TreeNode(test=dummy, left=child, right=child)
        return TreeNode(
            test=node.test,
            left=extend(node.left, depth + 1),
            right=extend(node.right, depth + 1),
        )

    return replace(tree, root=extend(tree.root, 0))


# -- feature map ---------------------------------------------------------------


def build_feature_matrix(tree: DecisionTree) -> list[list[int]]:
    """m x n one-hot matrix; row j is hot at the feature tested by node j."""
    rows = []
    for node in tree.level_nodes():
        row = [0] * tree.n
        row[node.feature - 1] = 1
        rows.append(row)
    return rows


# -- plaintext evaluation ------------------------------------------------------


def node_test(node: DecisionNode, x_value: int) -> int:
    if node.kind == KIND_THRESHOLD:
        return int(x_value > node.threshold)
    return int(x_value in node.members)


def eval_plain(tree: DecisionTree, x: list[int]) -> tuple[int, list[int], int]:
    """Evaluate on an encoded feature vector.

    Returns (label, per-node test bits in heap order, taken leaf index
    1-based). The walk goes left on 1 and right on 0.
    """
    if len(x) != tree.n:
        raise DomainError(f"feature vector length {len(x)} != n={tree.n}")
    nodes = tree.level_nodes()
    leaves = tree.level_leaves()
    b = [node_test(node, x[node.feature - 1]) for node in nodes]
    idx = 1
    for _ in range(tree.height):
        idx = 2 * idx if b[idx - 1] else 2 * idx + 1
    leaf_index = idx - (1 << tree.height) + 1
    return leaves[leaf_index - 1], b, leaf_index


def leaf_paths(height: int) -> list[list[tuple[int, bool]]]:
    """For each leaf (left to right), the (heap node index, went-left) path."""
    paths = []
    for leaf in range(1 << height):
        idx = 1
        path = []
        for level in range(height - 1, -1, -1):
            go_right = (leaf >> level) & 1
            path.append((idx, not go_right))
            idx = 2 * idx + go_right
        paths.append(path)
    return paths


def path_costs_plain(tree: DecisionTree, b: list[int]) -> list[int]:
    """Edge-cost sums per leaf: the taken edge costs 0, the other costs 1.

    A left edge costs 1-b_j and a right edge costs b_j, so exactly one
    leaf, the one the walk reaches, ends at total cost zero.
    """
    if len(b) != tree.m:
        raise DomainError(f"b-vector length {len(b)} != m={tree.m}")
    costs = []
    for path in leaf_paths(tree.height):
        cost = 0
        for node_idx, went_left in path:
            bj = b[node_idx - 1]
            cost += (1 - bj) if went_left else bj
        costs.append(cost)
    return costs


# -- boosted ensembles ---------------------------------------------------------


@dataclass(frozen=True)
class GbdtModel:
    """Boosted ensemble: prediction = bias + eta * sum of tree outputs.

    ``eta_encoded`` is scaled by 2**frac_bits and ``bias_encoded`` by
    2**(2*frac_bits), so the aggregate is exact at scale 2**(2*frac_bits).
    """

    trees: tuple[DecisionTree, ...]
    eta_encoded: int
    bias_encoded: int

    def __post_init__(self):
        if not self.trees:
            raise DomainError("ensemble needs at least one tree")
        first = self.trees[0]
        for tree in self.trees:
            if (tree.n, tree.t, tree.frac_bits) != (
                first.n,
                first.t,
                first.frac_bits,
            ):
                raise DomainError("all trees must share n, t and frac_bits")

    @property
    def n(self) -> int:
        return self.trees[0].n

    @property
    def t(self) -> int:
        return self.trees[0].t

    @property
    def frac_bits(self) -> int:
        return self.trees[0].frac_bits

    @property
    def output_scale(self) -> int:
        return 1 << (2 * self.frac_bits)

    @property
    def feature_kinds(self) -> tuple[str, ...]:
        merged = [FEATURE_NUMERIC] * self.n
        for tree in self.trees:
            for i, kind in enumerate(tree.feature_kinds):
                if kind == FEATURE_CATEGORICAL:
                    merged[i] = FEATURE_CATEGORICAL
        return tuple(merged)


def load_gbdt(document: dict) -> GbdtModel:
    if not isinstance(document, dict):
        raise IngestionError("document must be a JSON object")
    for key in ("eta", "t0", "trees"):
        if key not in document:
            raise IngestionError("missing required field", key)
    raw_trees = document["trees"]
    if not isinstance(raw_trees, list) or not raw_trees:
        raise IngestionError("must be a non-empty list", "trees")
    trees = []
    for i, doc in enumerate(raw_trees):
        try:
            trees.append(load_tree(doc))
        except IngestionError as exc:
            raise IngestionError(str(exc), f"trees[{i}]") from None
    frac_bits = trees[0].frac_bits
    model = GbdtModel(
        trees=tuple(trees),
        eta_encoded=encode_label(document["eta"], frac_bits),
        bias_encoded=encode_label(document["t0"], 2 * frac_bits),
    )
    # Mixed per-tree feature kinds would leave the client unable to encode.
    kinds = model.feature_kinds
    for tree in trees:
        for i, kind in enumerate(tree.feature_kinds):
            if kind == FEATURE_CATEGORICAL and kinds[i] != FEATURE_CATEGORICAL:
                raise IngestionError(f"feature {i + 1} kind differs across trees")
    return model


def eval_gbdt_plain(
    model: GbdtModel, x: list[int], magnitude_bound: int | None = None
) -> int:
    """Exact fixed-point aggregate at scale 2**(2*frac_bits)."""
    total = model.bias_encoded
    for tree in model.trees:
        label, _, _ = eval_plain(tree, x)
        total += model.eta_encoded * label
        if magnitude_bound is not None and abs(total) >= magnitude_bound:
            raise DomainError("aggregate magnitude exceeds the N/4 bound")
    return total


# -- client-side feature encoding ---------------------------------------------


def encode_features(values, n: int, spec: FixedPointSpec, feature_kinds) -> list[int]:
    """Encode raw feature values to the t-bit integer domain.

    Numeric features go through fixed-point scaling with the sign offset;
    categorical features are raw codes and must already fit t bits.
    """
    if len(values) != n:
        raise DomainError(f"expected {n} features, got {len(values)}")
    encoded = []
    for i, value in enumerate(values):
        if feature_kinds[i] == FEATURE_CATEGORICAL:
            if not isinstance(value, int) or isinstance(value, bool):
                raise DomainError(f"feature {i + 1}: category code must be int")
            if not 0 <= value < (1 << spec.total_bits):
                raise DomainError(
                    f"feature {i + 1}: code {value} does not fit {spec.total_bits} bits"
                )
            encoded.append(value)
        else:
            encoded.append(scale_fixed(value, spec))
    return encoded


# -- random model generators (benchmarks and tests) -----------------------------


def random_tree(
    rng: random.Random,
    height: int,
    n_features: int,
    t_bits: int,
    frac_bits: int = 0,
    member_fraction: float = 0.0,
    label_range: tuple[int, int] = (-100, 100),
) -> DecisionTree:
    """Random complete tree over the encoded value domain."""
    kinds = tuple(
        FEATURE_CATEGORICAL if rng.random() < member_fraction else FEATURE_NUMERIC
        for _ in range(n_features)
    )

    def make_node() -> DecisionNode:
        feature = rng.randrange(1, n_features + 1)
        if kinds[feature - 1] == FEATURE_CATEGORICAL:
            size = rng.randrange(1, 5)
            members = tuple(rng.sample(range(1 << t_bits), size))
            return DecisionNode(feature=feature, kind=KIND_MEMBER, members=members)
        return DecisionNode(
            feature=feature,
            kind=KIND_THRESHOLD,
            threshold=rng.randrange(1 << t_bits),
        )

    def grow(depth):
        if depth == height:
            return LeafNode(label=rng.randrange(*label_range))
        return TreeNode(test=make_node(), left=grow(depth + 1), right=grow(depth + 1))

    return DecisionTree(
        root=grow(0),
        n=n_features,
        t=t_bits,
        frac_bits=frac_bits,
        feature_kinds=kinds,
    )


def random_gbdt(
    rng: random.Random,
    n_trees: int,
    height: int,
    n_features: int,
    t_bits: int,
    frac_bits: int = 3,
    label_range: tuple[int, int] = (-60, 60),
) -> GbdtModel:
    trees = tuple(
        random_tree(
            rng,
            height,
            n_features,
            t_bits,
            frac_bits=frac_bits,
            label_range=label_range,
        )
        for _ in range(n_trees)
    )
    return GbdtModel(
        trees=trees,
        eta_encoded=rng.randrange(1, 1 << frac_bits),
        bias_encoded=rng.randrange(-(1 << (2 * frac_bits + 4)), 1 << (2 * frac_bits + 4)),
    )


def random_features(rng: random.Random, n: int, t_bits: int) -> list[int]:
    """Random encoded feature vector (already in the t-bit domain)."""
    return [rng.randrange(1 << t_bits) for _ in range(n)]
