"""
Joint training loop: next-item loss plus the contrastive loss between two
augmented, independently gated views of every batch.
"""

import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError
from tqdm import tqdm

from seqrec.config.settings import get_settings
from seqrec.core import autodiff as ad
from seqrec.core.augment import CorrelationTable, build_correlation, identity, select_augmentation
from seqrec.core.encoder import Checkpoint, SasrecParams, encode, init_params
from seqrec.core.errors import ContractError, NonFiniteLossError
from seqrec.core.gates import arm_step, expected_gate
from seqrec.core.losses import ViewPair, info_nce, joint_loss, next_item_loss, pool_sequence
from seqrec.core.optim import OptimizerState, adam_step, clip_global_norm
from seqrec.models.config import ModelConfig, RunConfig
from seqrec.models.reports import AblationRow, EpochRecord, MetricsReport, SweepRow
from seqrec.services.data_service import Batch, SplitDataset, left_pad, make_batches
from seqrec.services.evaluation_service import evaluate, evaluate_params

logger = logging.getLogger(__name__)

LAMBDA_GRID = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
HIDDEN_GRID = (64, 128, 192, 256, 320)
ABLATIONS = ("full", "no_ssl", "no_lma", "no_da")

# params -> validation report
Validator = Callable[[SasrecParams], MetricsReport]


@dataclass
class StepResult:
    """Loss components and pass counts of one optimizer step."""

    l_rs: float
    l_ssl: Optional[float]
    l_total: float
    forward_passes: int
    antithetic_passes: int
    ssl_skipped: bool = False
    grad_norm: float = 0.0


@dataclass
class FitResult:
    checkpoint: Checkpoint
    log: List[EpochRecord]
    best_epoch: int


def _check_finite(component: str, value: float) -> None:
    if not np.isfinite(value):
        raise NonFiniteLossError(component, value)


class JointTrainer:
    """Owns the encoder parameters, gates and optimizer state of one run."""

    def __init__(self, config: RunConfig, num_items: int, table: Optional[CorrelationTable] = None,
                 params: Optional[SasrecParams] = None):
        if config.train.disable_gates and not config.model.gates_disabled:
            # evaluation and checkpoints use the all-ones gates too
            config = config.model_copy(deep=True, update={
                "model": config.model.model_copy(update={"gates_disabled": True})})
        self.config = config
        self.num_items = num_items
        self.table = table if table is not None else CorrelationTable()
        self.params = params or init_params(config.model, num_items, np.random.default_rng([config.seed, 0]))
        self.state = OptimizerState()
        self.logger = logging.getLogger(__name__)
        settings = get_settings()
        self.progress = settings.progress and sys.stderr.isatty()

    @property
    def gate_mode(self) -> str:
        """'ones' (plain FFN), 'expected' (no model augmentation) or 'arm'."""
        if self.config.model.gates_disabled:
            return "ones"
        if self.config.train.no_lma:
            return "expected"
        return "arm"

    # ------------------------------------------------------------------
    # one step
    # ------------------------------------------------------------------

    def _views(self, batch: Batch, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """Two independently augmented copies of every input sequence, left-padded."""
        T = self.config.model.max_len
        views: Tuple[List[List[int]], List[List[int]]] = ([], [])
        for row in batch.inputs:
            seq = [int(i) for i in row if i != 0]
            for view in views:
                if self.config.train.no_da:
                    result = identity(seq)
                else:
                    result = select_augmentation(seq, self.config.augment, rng, self.table,
                                                 mask_token=self.params.mask_token, max_len=T)
                view.append(result.sequence)
        return left_pad(views[0], T), left_pad(views[1], T)

    def _masks_for(self, mode: str, passes: int) -> List[List[np.ndarray]]:
        if mode == "ones":
            layer = [np.ones(g.width) for g in self.params.gates]
        else:
            layer = [expected_gate(g) for g in self.params.gates]
        return [list(layer) for _ in range(passes)]

    def train_step(self, batch: Batch, rng: np.random.Generator) -> StepResult:
        """
        One joint optimizer step on ``batch``.

        The recommendation pass and the two SSL views each get their own gate
        draw. Continuous gradients come from backpropagating L_total under the
        sampled masks; gate-logit gradients come from the ARM estimator applied
        to L_total. Both feed a single Adam update.
        """
        train, loss_weights = self.config.train, self.config.loss
        use_ssl = not train.no_ssl
        ssl_skipped = use_ssl and batch.size < 2
        if ssl_skipped:
            self.logger.debug(f"Batch of {batch.size} sequence(s) is too small for the contrastive loss; L_ssl=0")
        run_views = use_ssl and not ssl_skipped
        views = self._views(batch, rng) if run_views else None
        passes = 3 if run_views else 1
        dropout_seed = int(rng.integers(0, 2 ** 63 - 1))
        components: List[Dict[str, ad.Tensor]] = []

        def forward(masks: List[List[np.ndarray]]) -> ad.Tensor:
            drop_rng = np.random.default_rng(dropout_seed)
            h = encode(batch.inputs, self.params, self.config.model, masks=masks[0], rng=drop_rng)
            l_rs = next_item_loss(h, batch.positives, batch.negatives, self.params.item_embedding)
            parts = {"l_rs": l_rs}
            if run_views:
                z_a = pool_sequence(encode(views[0], self.params, self.config.model, masks=masks[1], rng=drop_rng))
                z_b = pool_sequence(encode(views[1], self.params, self.config.model, masks=masks[2], rng=drop_rng))
                pair = ViewPair(z_a, z_b)
                if loss_weights.normalize_views:
                    pair = pair.normalized()
                parts["l_ssl"] = info_nce(pair, loss_weights.temperature)
                total = joint_loss(l_rs, parts["l_ssl"], loss_weights.lambda_)
            elif use_ssl:
                total = joint_loss(l_rs, 0.0, loss_weights.lambda_)
            else:
                total = l_rs
            parts["l_total"] = total
            components.append(parts)
            return total

        self.params.zero_grad()
        mode = self.gate_mode
        gate_grads: Optional[List[np.ndarray]] = None
        if mode == "arm":
            arm = arm_step(forward, self.params.gates, rng, passes=passes)
            loss, antithetic = arm.loss_true, 1
            gate_grads = arm.gradients
        else:
            loss, antithetic = forward(self._masks_for(mode, passes)), 0

        taped = components[0]
        l_rs = taped["l_rs"].item()
        l_ssl = taped["l_ssl"].item() if "l_ssl" in taped else (0.0 if use_ssl else None)
        l_total = loss.item()
        try:
            _check_finite("L_rs", l_rs)
            if l_ssl is not None:
                _check_finite("L_ssl", l_ssl)
            _check_finite("L_total", l_total)
            if mode == "arm":
                _check_finite("antithetic L_total", arm.loss_anti)
        except NonFiniteLossError:
            ad.current_tape().reset()
            raise

        ad.backward(loss)
        grad_norm = self._apply_update(gate_grads)
        self.logger.debug(f"step: L_rs={l_rs:.5f} L_ssl={l_ssl} L_total={l_total:.5f} |g|={grad_norm:.4f}")
        return StepResult(l_rs=l_rs, l_ssl=l_ssl, l_total=l_total, forward_passes=passes,
                          antithetic_passes=antithetic, ssl_skipped=ssl_skipped, grad_norm=grad_norm)

    def _apply_update(self, gate_grads: Optional[List[np.ndarray]]) -> float:
        train = self.config.train
        tensors = [t for _, t in self.params.named_tensors()]
        arrays = [t.data for t in tensors]
        grads = [None if t.grad is None else t.grad.copy() for t in tensors]
        if grads[0] is not None:
            grads[0][0] = 0.0
        scales = [1.0] * len(tensors)
        if gate_grads is not None:
            arrays += [g.logits for g in self.params.gates]
            grads += list(gate_grads)
            scales += [train.gate_lr_multiplier] * len(gate_grads)
        if self.state.first and len(self.state.first) != len(arrays):
            raise ContractError("optimizer state does not match the trained parameter set")

        grads, norm = clip_global_norm(grads, train.clip_norm)
        updated, self.state = adam_step(arrays, grads, self.state, train.learning_rate, train.adam_beta1,
                                        train.adam_beta2, train.adam_eps, lr_scales=scales)
        for tensor, value in zip(tensors, updated):
            tensor.data = value
        for gate, value in zip(self.params.gates, updated[len(tensors):]):
            gate.logits = value
        return norm

    # ------------------------------------------------------------------
    # epochs
    # ------------------------------------------------------------------

    def fit(self, split: SplitDataset, validate: Optional[Validator] = None) -> FitResult:
        """
        Train until ``max_epochs`` or until validation NDCG@10 has not improved
        for ``patience`` epochs; returns the best checkpoint and the epoch log.
        """
        if not len(split):
            raise ContractError("cannot train on an empty split")
        train = self.config.train
        validate = validate or (lambda params: evaluate_params(
            params, self.config.model, split, "valid", train.exclude_history, train.eval_batch_size))

        self.logger.info(f"🚀 Training on {len(split)} sequences for up to {train.max_epochs} epochs "
                         f"(gates={self.gate_mode}, ssl={not train.no_ssl}, da={not train.no_da})",
                         extra={"stage": "fit", "users": len(split)})
        log: List[EpochRecord] = []
        best_score, best_epoch, best_params, waited = -np.inf, 0, self.params.copy(), 0

        for epoch in range(1, train.max_epochs + 1):
            started = time.perf_counter()
            rng = np.random.default_rng([self.config.seed, epoch])
            batches = make_batches(split, train.batch_size, self.config.model.max_len, rng, epoch)
            steps: List[StepResult] = []
            for batch in tqdm(batches, desc=f"epoch {epoch}", leave=False, disable=not self.progress,
                              total=-(-len(split) // train.batch_size)):
                steps.append(self.train_step(batch, rng))

            report = validate(self.params)
            record = self._record(epoch, steps, report, time.perf_counter() - started)
            log.append(record)
            ndcg10 = report.ndcg[10]
            self.logger.info(
                f"📈 Epoch {epoch}: L_total={record.l_total:.4f} L_rs={record.l_rs:.4f} "
                f"L_ssl={record.l_ssl if record.l_ssl is None else round(record.l_ssl, 4)} "
                f"valid NDCG@10={ndcg10:.4f}",
                extra={"epoch": epoch, "l_total": record.l_total, "l_rs": record.l_rs,
                       "l_ssl": record.l_ssl, "valid_ndcg10": ndcg10},
            )
            if ndcg10 > best_score:
                best_score, best_epoch, best_params, waited = ndcg10, epoch, self.params.copy(), 0
            else:
                waited += 1
                if waited >= train.patience:
                    self.logger.info(f"⏹️ Early stop after epoch {epoch}; best epoch {best_epoch} "
                                     f"(NDCG@10={best_score:.4f})")
                    break

        checkpoint = Checkpoint(config=self.config.model, params=best_params, epoch=best_epoch,
                                metadata={"valid_ndcg10": float(best_score), "seed": self.config.seed})
        return FitResult(checkpoint=checkpoint, log=log, best_epoch=best_epoch)

    def _record(self, epoch: int, steps: Sequence[StepResult], report: MetricsReport,
                wall_time: float) -> EpochRecord:
        ssl_values = [s.l_ssl for s in steps if s.l_ssl is not None]
        return EpochRecord(
            epoch=epoch,
            l_rs=float(np.mean([s.l_rs for s in steps])),
            l_ssl=float(np.mean(ssl_values)) if ssl_values else None,
            l_total=float(np.mean([s.l_total for s in steps])),
            valid_hr=dict(report.hr),
            valid_ndcg=dict(report.ndcg),
            keep_probability=[float(np.mean(g.keep_probability())) for g in self.params.gates],
            steps=len(steps),
            forward_passes=sum(s.forward_passes for s in steps),
            antithetic_passes=sum(s.antithetic_passes for s in steps),
            ssl_skipped_steps=sum(1 for s in steps if s.ssl_skipped),
            wall_time=wall_time,
        )


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

def correlation_for(split: SplitDataset, config: RunConfig) -> CorrelationTable:
    """Item correlations from the training prefixes only."""
    return build_correlation(split.train, config.augment.correlation_window, config.augment.correlation_top_k)


def train_and_test(split: SplitDataset, config: RunConfig, table: Optional[CorrelationTable] = None,
                   validate: Optional[Validator] = None) -> Tuple[FitResult, MetricsReport]:
    """Fit one configuration and evaluate its best checkpoint on the test items."""
    table = table if table is not None else correlation_for(split, config)
    result = JointTrainer(config, split.num_items, table).fit(split, validate)
    test = evaluate(result.checkpoint, split, "test", config.train.exclude_history, config.train.eval_batch_size)
    return result, test


def sweep_log_name(lambda_: float, hidden_size: int) -> str:
    return f"train_log_{float(lambda_):g}_{int(hidden_size)}.jsonl"


def sweep(split: SplitDataset, config: RunConfig, lambdas: Sequence[float] = LAMBDA_GRID,
          hidden_sizes: Sequence[int] = HIDDEN_GRID, log_dir: Optional[Path] = None) -> List[SweepRow]:
    """
    Fit every (lambda, hidden size) grid point from the same seed and report
    its test metrics. Rows do not depend on the order the grid is visited in.
    With ``log_dir`` each point also writes its epoch log there.
    """
    if not lambdas or not hidden_sizes:
        raise ContractError("sweep grids must be nonempty")
    table = correlation_for(split, config)
    rows = []
    for hidden in hidden_sizes:
        for lam in lambdas:
            try:
                model = ModelConfig(**{**config.model.model_dump(), "embed_dim": int(hidden)})
            except ValidationError as e:
                raise ContractError(f"hidden size {hidden} is not usable: {e.errors()[0]['msg']}")
            point = config.model_copy(deep=True, update={
                "model": model,
                "loss": config.loss.model_copy(update={"lambda_": float(lam)}),
            })
            logger.info(f"🔬 Sweep point lambda={lam} hidden_size={hidden}")
            result, test = train_and_test(split, point, table)
            if log_dir is not None:
                write_train_log(result.log, Path(log_dir) / sweep_log_name(lam, hidden))
            rows.append(SweepRow(lambda_=float(lam), hidden_size=int(hidden), metrics=test.metrics()))
    return rows


def ablation_config(config: RunConfig, variant: str) -> RunConfig:
    if variant not in ABLATIONS:
        raise ContractError(f"unknown ablation variant '{variant}'; expected one of {ABLATIONS}")
    flags = {name: name == variant for name in ABLATIONS[1:]}
    return config.model_copy(deep=True, update={"train": config.train.model_copy(update=flags)})


def ablation_study(split: SplitDataset, config: RunConfig, variants: Sequence[str] = ABLATIONS,
                   log_dir: Optional[Path] = None) -> List[AblationRow]:
    """Test metrics of the full model and of each variant with one component removed."""
    table = correlation_for(split, config)
    rows = []
    for variant in variants:
        logger.info(f"🧪 Ablation variant {variant}")
        result, test = train_and_test(split, ablation_config(config, variant), table)
        if log_dir is not None:
            write_train_log(result.log, Path(log_dir) / f"train_log_{variant}.jsonl")
        rows.append(AblationRow(variant=variant, metrics=test.metrics()))
    return rows


def write_train_log(log: Sequence[EpochRecord], path: Path) -> None:
    """One JSON object per epoch."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(r.model_dump(), sort_keys=True) + "\n" for r in log))


def read_train_log(path: Path) -> List[EpochRecord]:
    return [EpochRecord(**json.loads(line)) for line in Path(path).read_text().splitlines() if line.strip()]


def rows_to_frame(rows: Sequence) -> pd.DataFrame:
    return pd.DataFrame([row.flat() for row in rows])


def write_table(rows: Sequence, csv_path: Path, text_path: Optional[Path] = None) -> None:
    """CSV of flattened rows, plus an aligned-column text rendering when ``text_path`` is given."""
    frame = rows_to_frame(rows)
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(csv_path, index=False, float_format="%.6f")
    if text_path is not None:
        Path(text_path).write_text(frame.to_string(index=False, float_format=lambda v: f"{v:.4f}") + "\n")
