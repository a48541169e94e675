"""The four-phase evaluation protocol.

Offline, the provider encrypts thresholds bitwise, labels, and the one-hot
feature map. Online, the client folds its feature vector into the
encrypted map (selection by ciphertext addition only), attaches a fresh
encrypted MAC key, and sends one message to each server. Each server
compares every decision node, randomizes path costs and labels, and
answers with a single message; the client reconstructs at the unique
zero-cost leaf and checks the proof shares against its MAC key. The
servers never exchange anything: masks and the output permutation are
derived from the shared PRF key and the query nonce.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .compare import EncryptedBits, encrypt_bits, set_membership, sic, to_bits
from .errors import DomainError, VerificationRejected
from .hss import centered
from .prf import stream
from .tree import (
    KIND_MEMBER,
    KIND_THRESHOLD,
    DecisionTree,
    GbdtModel,
    build_feature_matrix,
    leaf_paths,
)

MODE_PLAIN = "plain"
MODE_VERIFIABLE = "verifiable"
MODE_GBDT = "gbdt"
MODES = (MODE_PLAIN, MODE_VERIFIABLE, MODE_GBDT)

NONCE_BYTES = 16


@dataclass(frozen=True)
class EncryptedNodeTest:
    kind: str
    threshold_bits: EncryptedBits | None = None
    member_bits: tuple[EncryptedBits, ...] | None = None


@dataclass(frozen=True)
class EncryptedTree:
    height: int
    node_tests: tuple[EncryptedNodeTest, ...]
    labels: tuple
    feature_rows: tuple

    @property
    def m(self) -> int:
        return len(self.node_tests)

    @property
    def k(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class EncryptedModel:
    trees: tuple[EncryptedTree, ...]
    n: int
    t: int
    frac_bits: int
    feature_kinds: tuple[str, ...]
    eta_ct: object | None = None
    bias_ct: object | None = None

    @property
    def is_gbdt(self) -> bool:
        return self.eta_ct is not None


@dataclass(frozen=True)
class FeatureMap:
    """The published client download: encrypted one-hot maps plus shape.

    This is the one-time offline artifact; it reveals only the tree
    heights and which features are categorical, never the map itself.
    """

    n: int
    t: int
    frac_bits: int
    feature_kinds: tuple[str, ...]
    heights: tuple[int, ...]
    tree_rows: tuple  # per tree: m x n ciphertext rows
    gbdt: bool = False


@dataclass(frozen=True)
class ClientQuery:
    selected_bits: tuple  # per tree: m-tuple of EncryptedBits
    mac_key_ct: object
    nonce: bytes


@dataclass(frozen=True)
class ServerResponse:
    sigma: int
    mode: str
    tree_rows: tuple  # per tree: k rows of (pc, v[, w]) or (pc, mu, tau) shares
    bias_share: int | None = None
    bias_proof_share: int | None = None


@dataclass(frozen=True)
class TreeMasks:
    r0: tuple[int, ...]  # path-cost masks, units mod N
    r1: tuple[int, ...]  # label masks
    pi: tuple[int, ...]  # output permutation


@dataclass(frozen=True)
class MaskPlan:
    tree_masks: tuple[TreeMasks, ...]
    gbdt_masks: tuple[tuple[int, int], ...] | None = None


# -- input preparation: provider ------------------------------------------------


def provider_encrypt_model(hss, model: DecisionTree | GbdtModel) -> EncryptedModel:
    """Encrypt a complete tree or ensemble for upload to both servers."""
    if isinstance(model, GbdtModel):
        trees = model.trees
        bound = hss.pk.payload_bound
        worst = abs(model.bias_encoded) + sum(
            abs(model.eta_encoded) * max(abs(v) for v in tree.level_leaves())
            for tree in trees
        )
        if worst >= bound:
            raise DomainError("ensemble aggregate can exceed the N/4 bound")
        eta_ct = hss.input_signed(model.eta_encoded)
        bias_ct = hss.input_signed(model.bias_encoded)
    else:
        trees = (model,)
        eta_ct = bias_ct = None
    first = trees[0]
    kinds = model.feature_kinds
    return EncryptedModel(
        trees=tuple(_encrypt_tree(hss, tree) for tree in trees),
        n=first.n,
        t=first.t,
        frac_bits=first.frac_bits,
        feature_kinds=kinds,
        eta_ct=eta_ct,
        bias_ct=bias_ct,
    )


def feature_map_of(model: EncryptedModel) -> FeatureMap:
    """Extract the publishable feature-map artifact from an encrypted model."""
    return FeatureMap(
        n=model.n,
        t=model.t,
        frac_bits=model.frac_bits,
        feature_kinds=model.feature_kinds,
        heights=tuple(tree.height for tree in model.trees),
        tree_rows=tuple(tree.feature_rows for tree in model.trees),
        gbdt=model.is_gbdt,
    )


def _encrypt_tree(hss, tree: DecisionTree) -> EncryptedTree:
    tests = []
    for node in tree.level_nodes():
        if node.kind == KIND_THRESHOLD:
            tests.append(
                EncryptedNodeTest(
                    kind=KIND_THRESHOLD,
                    threshold_bits=encrypt_bits(hss, node.threshold, tree.t),
                )
            )
        else:
            tests.append(
                EncryptedNodeTest(
                    kind=KIND_MEMBER,
                    member_bits=tuple(
                        encrypt_bits(hss, member, tree.t) for member in node.members
                    ),
                )
            )
    labels = tuple(hss.input_signed(label) for label in tree.level_leaves())
    # The one-hot map is encrypted densely, zeros included.
    rows = tuple(
        tuple(hss.input(cell) for cell in row) for row in build_feature_matrix(tree)
    )
    return EncryptedTree(
        height=tree.height, node_tests=tuple(tests), labels=labels, feature_rows=rows
    )


# -- input preparation: client --------------------------------------------------


def sfs(hss, feature_rows, x_encoded: list[int], t: int) -> tuple[EncryptedBits, ...]:
    """Oblivious feature selection against one tree's encrypted one-hot map.

    Output entry (j, i) is a ciphertext of bit i of the feature tested at
    node j, assembled purely by ciphertext addition: row cells are summed
    wherever the corresponding feature bit is 1 and skipped otherwise.
    """
    n = len(x_encoded)
    bit_matrix = [to_bits(x, t) for x in x_encoded]
    out = []
    for row in feature_rows:
        if len(row) != n:
            raise DomainError("feature map width does not match the feature vector")
        node_bits = []
        for i in range(t):
            acc = None
            for s in range(n):
                if bit_matrix[s][i]:
                    acc = row[s] if acc is None else hss.add_ct(acc, row[s])
            if acc is None:
                acc = hss.input(0)
            node_bits.append(acc)
        out.append(EncryptedBits(bits=tuple(node_bits)))
    return tuple(out)


def client_build_query(
    hss,
    model: EncryptedModel | FeatureMap,
    x_encoded: list[int],
    rng: random.Random | None = None,
    nonce: bytes | None = None,
) -> tuple[ClientQuery, int]:
    """Run feature selection and attach a fresh one-time MAC key.

    ``model`` may be the full encrypted model or just the published
    feature map. Returns the query plus the MAC key, which never leaves
    the client in the clear.
    """
    rng = rng or random.SystemRandom()
    if len(x_encoded) != model.n:
        raise DomainError(f"expected {model.n} features, got {len(x_encoded)}")
    if isinstance(model, FeatureMap):
        rows_per_tree = model.tree_rows
    else:
        rows_per_tree = tuple(tree.feature_rows for tree in model.trees)
    selected = tuple(
        sfs(hss, rows, x_encoded, model.t) for rows in rows_per_tree
    )
    mac_key = rng.randrange(1, hss.n)
    if nonce is None:
        nonce = rng.getrandbits(8 * NONCE_BYTES).to_bytes(NONCE_BYTES, "big")
    if len(nonce) != NONCE_BYTES:
        raise DomainError("nonce must be 16 bytes")
    query = ClientQuery(
        selected_bits=selected, mac_key_ct=hss.input(mac_key), nonce=nonce
    )
    return query, mac_key


# -- server-side computation ----------------------------------------------------


def derive_mask_plan(ek, nonce: bytes, ks, gbdt: bool = False) -> MaskPlan:
    """Masks and permutations both servers derive identically, per query.

    The PRF inputs include the client's nonce so masks are fresh across
    queries. Path-cost masks are rejection-sampled into the unit group so
    a nonzero cost can never be masked to zero.
    """
    n = ek.n
    tree_masks = []
    for tree_idx, k in enumerate(ks):
        r0 = tuple(
            stream(ek.k_prf, "pc-mask", nonce, tree_idx, i, 0).unit(n)
            for i in range(k)
        )
        r1 = tuple(
            stream(ek.k_prf, "pc-mask", nonce, tree_idx, i, 1).below(n)
            for i in range(k)
        )
        pi = stream(ek.k_prf, "perm", nonce, tree_idx).permutation(k)
        tree_masks.append(TreeMasks(r0=r0, r1=r1, pi=pi))
    gbdt_masks = None
    if gbdt:
        s = len(ks)
        values = [stream(ek.k_prf, "gbdt", nonce, j).below(n) for j in range(s)]
        proofs = [stream(ek.k_prf, "gbdt-proof", nonce, j).below(n) for j in range(s)]
        values.append(-sum(values) % n)
        proofs.append(-sum(proofs) % n)
        gbdt_masks = tuple(zip(values, proofs))
    return MaskPlan(tree_masks=tuple(tree_masks), gbdt_masks=gbdt_masks)


def _compare_nodes(hss, ek, enc_tree: EncryptedTree, selected) -> list:
    """Memory values of the per-node test bits."""
    if len(selected) != enc_tree.m:
        raise DomainError("query does not match the model's node count")
    b_mems = []
    for test, sel_bits in zip(enc_tree.node_tests, selected):
        if test.kind == KIND_THRESHOLD:
            b_mems.append(sic(hss, ek, sel_bits, test.threshold_bits))
        else:
            b_mems.append(set_membership(hss, ek, sel_bits, test.member_bits))
    return b_mems


def _tree_shares(
    hss,
    ek,
    enc_tree: EncryptedTree,
    b_mems,
    masks: TreeMasks,
    mode: str,
    mac_ct,
    eta_ct,
    gbdt_mask,
):
    """Randomized, permuted output rows for one tree.

    Path costs sum a 1-b memory on left edges and b on the right; the
    chosen leaf is the only one at cost zero, kept zero by the unit mask,
    while every other row reconstructs to query-fresh randomness.
    """
    n = hss.n
    one = hss.trivial_one(ek)
    left_edges = [hss.sub_mem(one, mb) for mb in b_mems]
    right_edges = b_mems
    rows = []
    for i, path in enumerate(leaf_paths(enc_tree.height)):
        acc = hss.zero_mem(ek)
        for node_idx, went_left in path:
            edge = left_edges[node_idx - 1] if went_left else right_edges[node_idx - 1]
            acc = hss.add_mem(acc, edge)
        pc_star = hss.cmul(masks.r0[i], acc)
        v_mem = hss.convert_input(ek, enc_tree.labels[i])
        v_star = hss.add_mem(v_mem, hss.cmul(masks.r1[i], acc))
        if mode == MODE_PLAIN:
            mems = (pc_star, v_star)
        elif mode == MODE_VERIFIABLE:
            w_star = hss.mul(mac_ct, v_star)
            mems = (pc_star, v_star, w_star)
        else:
            # tau = A * eta * v, taken via the weighted label so the memory
            # operand of the proof multiplication stays small.
            mu_star = hss.mul(eta_ct, v_star)
            tau_star = hss.mul(mac_ct, mu_star)
            mems = (pc_star, mu_star, tau_star)
        row = [hss.output(mem, n).value for mem in mems]
        if mode == MODE_GBDT and ek.sigma == 1:
            # Only one server shifts the shares, so reconstructed per-tree
            # values are hidden while the mask sum cancels in the aggregate.
            row[1] = (row[1] + gbdt_mask[0]) % n
            row[2] = (row[2] + gbdt_mask[1]) % n
        rows.append(tuple(row))
    permuted = [None] * len(rows)
    for i, row in enumerate(rows):
        permuted[masks.pi[i]] = row
    return tuple(permuted)


def server_evaluate(
    hss, ek, model: EncryptedModel, query: ClientQuery, mode: str
) -> ServerResponse:
    """One server's whole turn: compare, randomize, respond. No peer traffic."""
    if mode not in MODES:
        raise DomainError(f"unknown mode {mode!r}")
    if (mode == MODE_GBDT) != model.is_gbdt:
        raise DomainError("mode does not match the model family")
    if len(query.selected_bits) != len(model.trees):
        raise DomainError("query tree count does not match the model")
    for tree, selected in zip(model.trees, query.selected_bits):
        for bits in selected:
            if bits.width != model.t:
                raise DomainError("query bit width does not match the model")
        if len(selected) != tree.m:
            raise DomainError("query node count does not match the model")

    plan = derive_mask_plan(
        ek, query.nonce, [tree.k for tree in model.trees], gbdt=(mode == MODE_GBDT)
    )
    tree_rows = []
    for idx, (enc_tree, selected) in enumerate(zip(model.trees, query.selected_bits)):
        b_mems = _compare_nodes(hss, ek, enc_tree, selected)
        gbdt_mask = plan.gbdt_masks[idx + 1] if plan.gbdt_masks else None
        tree_rows.append(
            _tree_shares(
                hss,
                ek,
                enc_tree,
                b_mems,
                plan.tree_masks[idx],
                mode,
                query.mac_key_ct,
                model.eta_ct,
                gbdt_mask,
            )
        )

    bias_share = bias_proof_share = None
    if mode == MODE_GBDT:
        n = hss.n
        m_bias = hss.convert_input(ek, model.bias_ct)
        bias_share = hss.output(m_bias, n).value
        m_proof = hss.mul(query.mac_key_ct, m_bias)
        bias_proof_share = hss.output(m_proof, n).value
        if ek.sigma == 1:
            bias_share = (bias_share + plan.gbdt_masks[0][0]) % n
            bias_proof_share = (bias_proof_share + plan.gbdt_masks[0][1]) % n

    return ServerResponse(
        sigma=ek.sigma,
        mode=mode,
        tree_rows=tuple(tree_rows),
        bias_share=bias_share,
        bias_proof_share=bias_proof_share,
    )


# -- result reconstruction ------------------------------------------------------


def _pair_up(resp0: ServerResponse, resp1: ServerResponse):
    if resp0.sigma == 1 and resp1.sigma == 0:
        resp0, resp1 = resp1, resp0
    if (resp0.sigma, resp1.sigma) != (0, 1):
        raise DomainError("need one response from each server")
    if resp0.mode != resp1.mode:
        raise DomainError("responses disagree on mode")
    if len(resp0.tree_rows) != len(resp1.tree_rows):
        raise DomainError("responses disagree on tree count")
    return resp0, resp1


def _zero_cost_index(rows0, rows1, n: int) -> int:
    if len(rows0) != len(rows1):
        raise DomainError("responses disagree on leaf count")
    zeros = [
        i
        for i, (row0, row1) in enumerate(zip(rows0, rows1))
        if (row1[0] - row0[0]) % n == 0
    ]
    if not zeros:
        raise VerificationRejected(
            VerificationRejected.REASON_NO_ZERO, "no zero-cost leaf found"
        )
    if len(zeros) > 1:
        raise VerificationRejected(
            VerificationRejected.REASON_AMBIGUOUS,
            f"{len(zeros)} zero-cost leaves found",
        )
    return zeros[0]


def reconstruct(resp0: ServerResponse, resp1: ServerResponse, n: int) -> int:
    """Recover the label from a pair of plain-mode responses."""
    resp0, resp1 = _pair_up(resp0, resp1)
    rows0, rows1 = resp0.tree_rows[0], resp1.tree_rows[0]
    idx = _zero_cost_index(rows0, rows1, n)
    return centered((rows1[idx][1] - rows0[idx][1]) % n, n)


def verify(
    resp0: ServerResponse, resp1: ServerResponse, mac_key: int, n: int
) -> int:
    """Recover and verify the label from verifiable-mode responses.

    Rejects when the path costs do not single out one leaf or when the
    proof share difference is not mac_key times the label.
    """
    resp0, resp1 = _pair_up(resp0, resp1)
    rows0, rows1 = resp0.tree_rows[0], resp1.tree_rows[0]
    idx = _zero_cost_index(rows0, rows1, n)
    label_mod = (rows1[idx][1] - rows0[idx][1]) % n
    proof_mod = (rows1[idx][2] - rows0[idx][2]) % n
    if mac_key * label_mod % n != proof_mod:
        raise VerificationRejected(
            VerificationRejected.REASON_MAC_MISMATCH, "label proof check failed"
        )
    return centered(label_mod, n)


def reconstruct_gbdt(
    resp0: ServerResponse, resp1: ServerResponse, mac_key: int, n: int
) -> int:
    """Aggregate per-tree weighted outputs plus the bias, then verify.

    Per-tree masks shift each reconstructed summand but cancel in the
    totals; a single aggregate proof check covers bias and every tree.
    """
    resp0, resp1 = _pair_up(resp0, resp1)
    if resp0.bias_share is None or resp1.bias_share is None:
        raise DomainError("responses lack the ensemble bias shares")
    total = (resp1.bias_share - resp0.bias_share) % n
    proof_total = (resp1.bias_proof_share - resp0.bias_proof_share) % n
    for rows0, rows1 in zip(resp0.tree_rows, resp1.tree_rows):
        idx = _zero_cost_index(rows0, rows1, n)
        total = (total + rows1[idx][1] - rows0[idx][1]) % n
        proof_total = (proof_total + rows1[idx][2] - rows0[idx][2]) % n
    if mac_key * total % n != proof_total:
        raise VerificationRejected(
            VerificationRejected.REASON_MAC_MISMATCH, "aggregate proof check failed"
        )
    return centered(total, n)
