"""Searchable over-parameterized network with physical input streams.

The graph is a fixed ten-node DAG: four input nodes (features, a duplicate
feature stream, the physics-prior estimate, and their concatenation), five
hidden nodes of width 128, and one output node. Every earlier node connects
to every hidden/output node through a mixed operator: a gated sum over a
small candidate-operation set. Closed-form physics appears as a candidate
operation on edges into the output node only.

Gating is binarized: a sampled sub-network runs at full strength while the
architecture logits receive gradients through a straight-through estimator
(the hard 0/1 gate behaves as the underlying softmax probability on the
backward pass). A relaxed, probability-weighted forward exists for
monitoring and tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import physics
from .datasets import TaskContext, seeded_rng
from .errors import ShapeError

HIDDEN_WIDTH = 128
N_HIDDEN = 5
EDGES_KEPT_PER_NODE = 2

OP_FC_RELU = "fc_relu"
OP_FC_LINEAR = "fc_linear"
OP_IDENTITY = "identity"
OP_ZERO = "zero"
OP_PHYSICS = "physics"

KIND_INPUT_X = "input_x"
KIND_INPUT_X_DUP = "input_x_dup"
KIND_INPUT_Y_PHY = "input_y_phy"
KIND_INPUT_CONCAT = "input_concat"
KIND_HIDDEN = "hidden"
KIND_OUTPUT = "output"

INPUT_KINDS = (KIND_INPUT_X, KIND_INPUT_X_DUP, KIND_INPUT_Y_PHY, KIND_INPUT_CONCAT)
ARCH_SCHEMA_VERSION = 1


def _np_softmax(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - np.max(v))
    return e / e.sum()


class _PhysicsStage:
    """Shared closed-form stage: parameter offsets -> normalized labels."""

    def __init__(self, ctx: TaskContext):
        self.ctx = ctx
        std, mean = ctx.y_norm.std, ctx.y_norm.mean
        self._norm_w = ad.constant(np.diag(1.0 / std))
        self._norm_b = ad.constant(-mean / std)

    def __call__(self, offsets: ad.Tensor) -> ad.Tensor:
        if offsets.value.ndim == 2:
            anchor = np.tile(self.ctx.param_anchor, (offsets.value.shape[0], 1))
        else:
            anchor = self.ctx.param_anchor
        params = ad.add(offsets, ad.constant(anchor))
        decoded = physics.decode_params(self.ctx.task, params, self.ctx.stamp_dt)
        return ad.affine(decoded, self._norm_w, self._norm_b)


class CandidateOp:
    """One operation on an edge; owns its weights if it has any."""

    def __init__(self, kind: str, in_dim: int, out_dim: int,
                 rng: np.random.Generator | None, stage: _PhysicsStage | None):
        self.kind = kind
        self.in_dim = in_dim
        self.out_dim = out_dim
        self._stage = stage
        if kind in (OP_FC_RELU, OP_FC_LINEAR):
            self.w, self.b = ad.affine_params(rng, in_dim, out_dim)
        elif kind == OP_PHYSICS:
            self.w, self.b = ad.affine_params(rng, in_dim, physics.N_PHYSICAL_PARAMS)
        elif kind == OP_IDENTITY:
            if in_dim != out_dim:
                raise ShapeError(f"identity cannot map width {in_dim} to {out_dim}")
            self.w = self.b = None
        elif kind == OP_ZERO:
            self.w = self.b = None
        else:
            raise ValueError(f"unknown candidate operation {kind!r}")

    @property
    def params(self) -> list[ad.Tensor]:
        return [self.w, self.b] if self.w is not None else []

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        if self.kind == OP_FC_RELU:
            return ad.relu(ad.affine(x, self.w, self.b))
        if self.kind == OP_FC_LINEAR:
            return ad.affine(x, self.w, self.b)
        if self.kind == OP_IDENTITY:
            return x
        if self.kind == OP_ZERO:
            shape = ((x.value.shape[0], self.out_dim) if x.value.ndim == 2
                     else (self.out_dim,))
            return ad.constant(np.zeros(shape))
        return self._stage(ad.affine(x, self.w, self.b))


class Edge:
    """A mixed operator between two nodes, with per-operation logits."""

    def __init__(self, src: int, dst: int, ops: list[CandidateOp]):
        self.src = src
        self.dst = dst
        self.ops = ops
        self.alpha = ad.tensor(np.zeros(len(ops)), requires_grad=True)

    def op_kinds(self) -> list[str]:
        return [op.kind for op in self.ops]

    def mixed_relaxed(self, x: ad.Tensor) -> ad.Tensor:
        """Probability-weighted sum over every candidate operation."""
        probs = ad.softmax(self.alpha)
        out = None
        for k, op in enumerate(self.ops):
            term = ad.scale_by(op(x), ad.take_cols(probs, [k]))
            out = term if out is None else ad.add(out, term)
        return out

    def mixed_sampled(self, x: ad.Tensor, op_idx: int) -> ad.Tensor:
        """The sampled operation at full strength; its gate carries the
        straight-through gradient into the operation logits."""
        p_op = ad.take_cols(ad.softmax(self.alpha), [op_idx])
        return ad.scale_by(self.ops[op_idx](x), ad.harden(p_op))

    def mixed_compared(self, x: ad.Tensor, op_idx: int,
                       challenger: int | None) -> ad.Tensor:
        """The sampled operation at full strength plus a silent challenger.

        The challenger adds nothing to the value, but both gates carry
        first-order credit through the pair-renormalized probabilities, so
        the two logits trade mass zero-sum by relative merit on the same
        batch. Without a challenger this reduces to the plain sampled mix.
        """
        if challenger is None:
            return self.mixed_sampled(x, op_idx)
        q = ad.softmax(ad.take_cols(self.alpha, [op_idx, challenger]))
        on = ad.scale_by(self.ops[op_idx](x), ad.harden(ad.take_cols(q, [0])))
        off = ad.scale_by(self.ops[challenger](x),
                          ad.harden_off(ad.take_cols(q, [1])))
        return ad.add(on, off)


class Node:
    def __init__(self, idx: int, kind: str, width: int):
        self.idx = idx
        self.kind = kind
        self.width = width
        self.incoming: list[Edge] = []
        self.alpha_e: ad.Tensor | None = None  # set once edges exist

    def finalize(self):
        if self.kind in (KIND_HIDDEN, KIND_OUTPUT):
            self.alpha_e = ad.tensor(np.zeros(len(self.incoming)), requires_grad=True)


@dataclass
class GateSample:
    """Active (edge position, operation index) pairs per learnable node,
    plus the probabilities in force when the sample was drawn."""
    choices: dict[int, tuple[tuple[int, int], ...]]
    edge_probs: dict[int, list[float]]
    op_probs: dict[int, dict[int, list[float]]]


@dataclass
class CompareSample:
    """A gate sample extended with silent challengers for the architecture
    step: per node, which active slot is challenged, the challenger edge
    (position, operation) drawn from the inactive edges, and a challenger
    operation per active edge."""
    gates: GateSample
    challenged: dict[int, int]
    edge_challenger: dict[int, tuple[int, int] | None]
    op_challenger: dict[int, dict[int, int | None]]


class Supernet:
    def __init__(self, ctx: TaskContext, seed: int, hidden: int = HIDDEN_WIDTH):
        self.ctx = ctx
        self.seed = seed
        self.hidden = hidden
        self.stage = _PhysicsStage(ctx)
        in_dim, out_dim = ctx.dims
        rng = seeded_rng("physarch-supernet", ctx.task, seed)

        widths = [in_dim, in_dim, out_dim, in_dim + out_dim] + [hidden] * N_HIDDEN + [out_dim]
        kinds = list(INPUT_KINDS) + [KIND_HIDDEN] * N_HIDDEN + [KIND_OUTPUT]
        self.nodes = [Node(i, k, w) for i, (k, w) in enumerate(zip(kinds, widths))]
        self.out_idx = len(self.nodes) - 1

        for node in self.nodes:
            if node.kind not in (KIND_HIDDEN, KIND_OUTPUT):
                continue
            for src in range(node.idx):
                src_w = self.nodes[src].width
                ops = [CandidateOp(OP_FC_RELU, src_w, node.width, rng, None),
                       CandidateOp(OP_FC_LINEAR, src_w, node.width, rng, None)]
                if src_w == node.width:
                    ops.append(CandidateOp(OP_IDENTITY, src_w, node.width, None, None))
                ops.append(CandidateOp(OP_ZERO, src_w, node.width, None, None))
                if node.kind == KIND_OUTPUT:
                    ops.append(CandidateOp(OP_PHYSICS, src_w, node.width, rng, self.stage))
                node.incoming.append(Edge(src, node.idx, ops))
            node.finalize()

    # --- parameter partitions ---

    @property
    def learnable_nodes(self) -> list[Node]:
        return [n for n in self.nodes if n.kind in (KIND_HIDDEN, KIND_OUTPUT)]

    def weight_params(self) -> list[ad.Tensor]:
        out = []
        for node in self.learnable_nodes:
            for edge in node.incoming:
                for op in edge.ops:
                    out.extend(op.params)
        return out

    def alpha_params(self, include_edge_logits: bool = True) -> list[ad.Tensor]:
        out = []
        for node in self.learnable_nodes:
            for edge in node.incoming:
                out.append(edge.alpha)
            if include_edge_logits:
                out.append(node.alpha_e)
        return out

    # --- forwards ---

    def _input_values(self, xn: ad.Tensor, ypn: ad.Tensor) -> dict[int, ad.Tensor]:
        return {0: xn, 1: xn, 2: ypn, 3: ad.concat([xn, ypn])}

    def forward_sampled(self, xn: ad.Tensor, ypn: ad.Tensor, gates: GateSample) -> ad.Tensor:
        values = self._input_values(xn, ypn)
        for node in self.learnable_nodes:
            edge_probs = ad.softmax(node.alpha_e)
            acc = None
            for pos, op_idx in gates.choices[node.idx]:
                edge = node.incoming[pos]
                mixed = edge.mixed_sampled(values[edge.src], op_idx)
                p_edge = ad.take_cols(edge_probs, [pos])
                gated = ad.scale_by(mixed, ad.harden(p_edge))
                acc = gated if acc is None else ad.add(acc, gated)
            values[node.idx] = acc
        return values[self.out_idx]

    def forward_compared(self, xn: ad.Tensor, ypn: ad.Tensor,
                         sample: CompareSample) -> ad.Tensor:
        """Sampled forward for the architecture step.

        Active gates run at full strength; the value equals the plain
        sampled forward for the same active choices. Each node's challenged
        slot is paired with a silent challenger edge, and each active edge
        with a silent challenger operation — contributing nothing to the
        value but receiving first-order credit, so every compared pair of
        logits moves zero-sum by relative merit on the same batch.
        """
        values = self._input_values(xn, ypn)
        for node in self.learnable_nodes:
            active = sample.gates.choices[node.idx]
            ch_slot = sample.challenged.get(node.idx)
            ch_edge = sample.edge_challenger.get(node.idx)
            op_ch = sample.op_challenger.get(node.idx, {})
            acc = None
            for slot, (pos, op_idx) in enumerate(active):
                edge = node.incoming[pos]
                feat = edge.mixed_compared(values[edge.src], op_idx,
                                           op_ch.get(pos))
                if ch_edge is not None and slot == ch_slot:
                    qe = ad.softmax(ad.take_cols(node.alpha_e,
                                                 [pos, ch_edge[0]]))
                    feat = ad.scale_by(feat, ad.harden(ad.take_cols(qe, [0])))
                    rival = node.incoming[ch_edge[0]]
                    silent = rival.ops[ch_edge[1]](values[rival.src])
                    feat = ad.add(feat, ad.scale_by(
                        silent, ad.harden_off(ad.take_cols(qe, [1]))))
                acc = feat if acc is None else ad.add(acc, feat)
            values[node.idx] = acc
        return values[self.out_idx]

    def forward_relaxed(self, xn: ad.Tensor, ypn: ad.Tensor) -> ad.Tensor:
        values = self._input_values(xn, ypn)
        for node in self.learnable_nodes:
            edge_probs = ad.softmax(node.alpha_e)
            acc = None
            for pos, edge in enumerate(node.incoming):
                mixed = edge.mixed_relaxed(values[edge.src])
                gated = ad.scale_by(mixed, ad.take_cols(edge_probs, [pos]))
                acc = gated if acc is None else ad.add(acc, gated)
            values[node.idx] = acc
        return values[self.out_idx]


def build_supernet(ctx: TaskContext, seed: int, hidden: int = HIDDEN_WIDTH) -> Supernet:
    return Supernet(ctx, seed, hidden)


# --- gate sampling ---

def sample_gates(net: Supernet, rng: np.random.Generator) -> GateSample:
    """Two incoming edges per node, drawn sequentially without replacement
    from softmax(edge logits); one operation per active edge from
    softmax(operation logits). Nodes with fewer candidates keep them all."""
    choices: dict[int, tuple[tuple[int, int], ...]] = {}
    edge_probs: dict[int, list[float]] = {}
    op_probs: dict[int, dict[int, list[float]]] = {}
    for node in net.learnable_nodes:
        n_edges = len(node.incoming)
        p = _np_softmax(node.alpha_e.value)
        edge_probs[node.idx] = p.tolist()
        k = min(EDGES_KEPT_PER_NODE, n_edges)
        remaining = p.copy()
        picked: list[int] = []
        for _ in range(k):
            pn = remaining / remaining.sum()
            c = int(rng.choice(n_edges, p=pn))
            picked.append(c)
            remaining[c] = 0.0
        pairs = []
        op_probs[node.idx] = {}
        for pos in sorted(picked):
            po = _np_softmax(node.incoming[pos].alpha.value)
            op_probs[node.idx][pos] = po.tolist()
            op_idx = int(rng.choice(len(po), p=po))
            pairs.append((pos, op_idx))
        choices[node.idx] = tuple(pairs)
    return GateSample(choices=choices, edge_probs=edge_probs, op_probs=op_probs)


def sample_compare_gates(net: Supernet, rng: np.random.Generator) -> CompareSample:
    """The architecture-step sample: an ordinary gate sample plus, per node,
    one challenger edge drawn from the inactive edges by renormalized
    probability (with an operation of its own) and one challenger operation
    per active edge, drawn from that edge's remaining operations."""
    gates = sample_gates(net, rng)
    challenged: dict[int, int] = {}
    edge_ch: dict[int, tuple[int, int] | None] = {}
    op_ch: dict[int, dict[int, int | None]] = {}
    for node in net.learnable_nodes:
        active = gates.choices[node.idx]
        taken = {pos for pos, _ in active}
        pool = [i for i in range(len(node.incoming)) if i not in taken]
        challenged[node.idx] = int(rng.integers(len(active))) if active else 0
        if pool:
            pe = np.asarray(gates.edge_probs[node.idx])[pool]
            pos_c = pool[int(rng.choice(len(pool), p=pe / pe.sum()))]
            po = _np_softmax(node.incoming[pos_c].alpha.value)
            edge_ch[node.idx] = (pos_c, int(rng.choice(len(po), p=po)))
        else:
            edge_ch[node.idx] = None
        per_edge: dict[int, int | None] = {}
        for pos, op_idx in active:
            n_ops = len(node.incoming[pos].ops)
            if n_ops < 2:
                per_edge[pos] = None
                continue
            po = np.asarray(gates.op_probs[node.idx][pos]).copy()
            po[op_idx] = 0.0
            per_edge[pos] = int(rng.choice(n_ops, p=po / po.sum()))
        op_ch[node.idx] = per_edge
    return CompareSample(gates=gates, challenged=challenged,
                         edge_challenger=edge_ch, op_challenger=op_ch)


# --- pruning and the frozen architecture form ---

@dataclass
class Architecture:
    """A pruned sub-network: per retained node, its chosen incoming edges
    and their operations. Nodes off every input-to-output path are dropped
    from the node/edge lists but recorded."""
    task: str
    nodes: list[dict]
    edges: list[dict]
    dead_nodes: list[dict]
    provenance: dict = field(default_factory=dict)


def _liveness(out_idx: int, edges: list[dict]) -> set[int]:
    carrying = [e for e in edges if e["op"] != OP_ZERO]
    fwd = set(range(4))  # input nodes emit their values
    changed = True
    while changed:
        changed = False
        for e in carrying:
            if e["src"] in fwd and e["dst"] not in fwd:
                fwd.add(e["dst"])
                changed = True
    back = {out_idx}
    changed = True
    while changed:
        changed = False
        for e in carrying:
            if e["dst"] in back and e["src"] not in back:
                back.add(e["src"])
                changed = True
    return fwd & back


def prune(net: Supernet, by_op_prob: bool = False, provenance: dict | None = None) -> Architecture:
    """Keep the two strongest incoming edges per node (ties to the lower
    index) and each kept edge's highest-probability operation. Edge strength
    is softmax(edge logits), or the edge's maximum operation probability
    when edge logits are disabled (`by_op_prob`)."""
    chosen: list[dict] = []
    for node in net.learnable_nodes:
        if by_op_prob:
            scores = np.array([float(np.max(_np_softmax(e.alpha.value)))
                               for e in node.incoming])
        else:
            scores = _np_softmax(node.alpha_e.value)
        order = np.argsort(-scores, kind="stable")
        for pos in sorted(int(i) for i in order[:EDGES_KEPT_PER_NODE]):
            edge = node.incoming[pos]
            op_idx = int(np.argmax(_np_softmax(edge.alpha.value)))
            chosen.append({"src": edge.src, "dst": edge.dst,
                           "op": edge.ops[op_idx].kind})
    live = _liveness(net.out_idx, chosen)
    nodes = [{"id": n.idx, "kind": n.kind, "width": n.width}
             for n in net.nodes if n.idx in live]
    dead = [{"id": n.idx, "kind": n.kind}
            for n in net.nodes if n.idx not in live]
    edges = [e for e in chosen if e["src"] in live and e["dst"] in live]
    meta = dict(provenance or {})
    # the full pre-liveness selection, so the two-edges-per-node property
    # stays checkable after dead branches are trimmed from `edges`
    meta["selected"] = [dict(e) for e in chosen]
    return Architecture(task=net.ctx.task, nodes=nodes, edges=edges,
                        dead_nodes=dead, provenance=meta)


def gates_to_architecture(net: Supernet, gates: GateSample,
                          provenance: dict | None = None) -> Architecture:
    """The sub-network a gate sample activates, in frozen form."""
    chosen = []
    for node in net.learnable_nodes:
        for pos, op_idx in gates.choices[node.idx]:
            edge = node.incoming[pos]
            chosen.append({"src": edge.src, "dst": edge.dst,
                           "op": edge.ops[op_idx].kind})
    live = _liveness(net.out_idx, chosen)
    nodes = [{"id": n.idx, "kind": n.kind, "width": n.width}
             for n in net.nodes if n.idx in live]
    dead = [{"id": n.idx, "kind": n.kind} for n in net.nodes if n.idx not in live]
    edges = [e for e in chosen if e["src"] in live and e["dst"] in live]
    return Architecture(task=net.ctx.task, nodes=nodes, edges=edges,
                        dead_nodes=dead, provenance=provenance or {})


def arch_depth(arch: Architecture) -> int:
    """Longest input-to-output path, counting value-carrying edges."""
    carrying = [e for e in arch.edges if e["op"] != OP_ZERO]
    node_ids = {n["id"] for n in arch.nodes}
    depth = {i: 0 for i in node_ids if i < 4}
    for i in sorted(node_ids):
        for e in carrying:
            if e["dst"] == i and e["src"] in depth:
                depth[i] = max(depth.get(i, 0), depth[e["src"]] + 1)
    out = [n["id"] for n in arch.nodes if n["kind"] == KIND_OUTPUT]
    return depth.get(out[0], 0) if out else 0


def uses_physics_op(arch: Architecture) -> bool:
    return any(e["op"] == OP_PHYSICS for e in arch.edges)


# --- export ---

def arch_to_json(arch: Architecture) -> str:
    payload = {"version": ARCH_SCHEMA_VERSION, "task": arch.task,
               "nodes": arch.nodes, "edges": arch.edges,
               "dead_nodes": arch.dead_nodes, "provenance": arch.provenance}
    return json.dumps(payload, indent=2, sort_keys=True)


def arch_from_json(text: str) -> Architecture:
    d = json.loads(text)
    if d.get("version") != ARCH_SCHEMA_VERSION:
        raise ValueError(f"unsupported architecture schema version {d.get('version')!r}")
    return Architecture(task=d["task"], nodes=d["nodes"], edges=d["edges"],
                        dead_nodes=d["dead_nodes"], provenance=d["provenance"])


def arch_to_dot(arch: Architecture) -> str:
    lines = ["digraph architecture {", "  rankdir=LR;"]
    for n in arch.nodes:
        lines.append(f'  n{n["id"]} [label="{n["kind"]}#{n["id"]}"];')
    for e in arch.edges:
        lines.append(f'  n{e["src"]} -> n{e["dst"]} [label="{e["op"]}"];')
    lines.append("}")
    return "\n".join(lines)


def export_architecture(arch: Architecture, fmt: str) -> str:
    if fmt == "json":
        return arch_to_json(arch)
    if fmt == "dot":
        return arch_to_dot(arch)
    raise ValueError(f"unknown export format {fmt!r} (use 'json' or 'dot')")


# --- materialized plain models ---

@dataclass(frozen=True)
class ArchModelSpec:
    kind: str
    task: str


class ArchModel:
    """A plain trainable model for a frozen architecture.

    Weight tensors are either freshly seeded (retraining) or taken from a
    supernet's candidate operations (sample equivalence checks).
    """

    def __init__(self, arch: Architecture, ctx: TaskContext,
                 seed: int | None = None, ops: dict | None = None):
        if arch.task != ctx.task:
            raise ShapeError(f"architecture task {arch.task!r} != context {ctx.task!r}")
        self.arch = arch
        self.ctx = ctx
        self.spec = ArchModelSpec(kind="nas", task=ctx.task)
        self.stage = _PhysicsStage(ctx)
        std, mean = ctx.y_norm.std, ctx.y_norm.mean
        self._denorm_w = ad.constant(np.diag(std))
        self._denorm_b = ad.constant(mean)
        widths = {n["id"]: n["width"] for n in arch.nodes}
        self._edge_ops: list[tuple[int, int, CandidateOp]] = []
        if ops is not None:
            for key in sorted(ops):
                src, dst = key
                self._edge_ops.append((src, dst, ops[key]))
        else:
            rng = seeded_rng("physarch-weights", ctx.task, seed or 0)
            for e in sorted(arch.edges, key=lambda e: (e["dst"], e["src"])):
                if e["op"] == OP_ZERO:
                    continue
                op = CandidateOp(e["op"], widths[e["src"]], widths[e["dst"]],
                                 rng, self.stage if e["op"] == OP_PHYSICS else None)
                self._edge_ops.append((e["src"], e["dst"], op))
        self.params = [p for _, _, op in self._edge_ops for p in op.params]
        self._widths = widths
        self._node_order = sorted(widths)
        self._out_idx = max(widths) if widths else None

    def forward(self, xn: ad.Tensor, ypn: ad.Tensor) -> ad.Tensor:
        values: dict[int, ad.Tensor] = {}
        inputs = {0: xn, 1: xn, 2: ypn, 3: ad.concat([xn, ypn])}
        out_kind = {n["id"]: n["kind"] for n in self.arch.nodes}
        for i in self._node_order:
            if out_kind[i] in INPUT_KINDS:
                values[i] = inputs[i]
                continue
            acc = None
            for src, dst, op in self._edge_ops:
                if dst != i or src not in values:
                    continue
                term = op(values[src])
                acc = term if acc is None else ad.add(acc, term)
            if acc is None:
                # A starved node emits zeros, exactly like a zero operation.
                # Downstream operations can map zeros to non-zero output (a
                # physics decode does; trained biases would), so the node
                # must stay in the graph rather than vanish.
                shape = ((xn.value.shape[0], self._widths[i])
                         if xn.value.ndim == 2 else (self._widths[i],))
                values[i] = ad.constant(np.zeros(shape))
                continue
            values[i] = acc
        out_nodes = [i for i, k in out_kind.items() if k == KIND_OUTPUT]
        if not out_nodes or out_nodes[0] not in values:
            n = xn.value.shape[0] if xn.value.ndim == 2 else None
            width = self.ctx.dims[1]
            shape = (n, width) if n is not None else (width,)
            return ad.constant(np.zeros(shape))
        return values[out_nodes[0]]

    def denormalize(self, pred_n: ad.Tensor) -> ad.Tensor:
        return ad.affine(pred_n, self._denorm_w, self._denorm_b)

    def predict(self, x_raw: np.ndarray, y_phy_raw: np.ndarray) -> np.ndarray:
        xn = ad.constant(self.ctx.x_norm.transform(x_raw))
        ypn = ad.constant(self.ctx.y_norm.transform(y_phy_raw))
        return self.ctx.y_norm.inverse(self.forward(xn, ypn).value)


def materialize_sample(net: Supernet, gates: GateSample) -> ArchModel:
    """Plain model wired exactly like the gate sample, sharing the
    supernet's weight tensors. Gates multiply by exactly one, so this model
    must agree with the sampled supernet forward bit for bit.

    The whole sampled graph is kept, with no liveness pruning: a node whose
    sampled operations are all zeros still emits zeros, and a downstream
    operation may map those zeros to non-zero output, so dropping the node
    would change the forward value."""
    chosen: list[dict] = []
    ops: dict[tuple[int, int], CandidateOp] = {}
    for node in net.learnable_nodes:
        for pos, op_idx in gates.choices[node.idx]:
            edge = node.incoming[pos]
            chosen.append({"src": edge.src, "dst": edge.dst,
                           "op": edge.ops[op_idx].kind})
            if edge.ops[op_idx].kind != OP_ZERO:
                ops[(edge.src, edge.dst)] = edge.ops[op_idx]
    nodes = [{"id": n.idx, "kind": n.kind, "width": n.width} for n in net.nodes]
    arch = Architecture(task=net.ctx.task, nodes=nodes, edges=chosen,
                        dead_nodes=[], provenance={})
    return ArchModel(arch, net.ctx, ops=ops)
