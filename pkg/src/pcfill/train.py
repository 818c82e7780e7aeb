"""Training loop: scheduled two-term Chamfer loss, Adam, epoch-boundary
checkpoints, and a metrics CSV.

One optimizer step consumes one batch; the loss is the batch mean of
CD(coarse, gt) + alpha * CD(out, gt) with alpha ramping linearly over the
first alpha_ramp_iters steps. The coarse-only variant trains on the coarse
term alone. Every epoch visits each training object once in a shuffled order
with a freshly drawn view, so resuming from a checkpoint (which stores the
run RNG state) continues the exact same sample stream.
"""

import numpy as np
from pathlib import Path

from . import __version__
from . import autodiff as ad
from . import checkpoint as ckpt
from . import config as config_mod
from . import geometry, kernels, network
from .data.dataset import Dataset

METRICS_COLUMNS = ("epoch", "iter", "alpha", "lr", "cd_coarse", "cd_out",
                   "fscore")


class TrainError(Exception):
    pass


def alpha_at(cfg, iteration):
    """Refinement-term weight at a given optimizer step (linear ramp)."""
    f = min(max(iteration / cfg.alpha_ramp_iters, 0.0), 1.0)
    return cfg.alpha_start + f * (cfg.alpha_end - cfg.alpha_start)


def lr_at(cfg, epoch):
    return cfg.learning_rate * cfg.lr_decay ** (epoch // cfg.lr_decay_epochs)


class Adam:
    """Bias-corrected Adam over a Params store."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.items()}

    def step(self, lr):
        self.t += 1
        for name, tns in self.params.items():
            g = tns.grad
            if g is None:
                g = np.zeros_like(tns.data)
            elif not np.isfinite(g).all():
                raise TrainError(f"non-finite gradient in parameter '{name}'")
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            mhat = m / (1 - self.beta1 ** self.t)
            vhat = v / (1 - self.beta2 ** self.t)
            tns.data = tns.data - (lr * mhat / (np.sqrt(vhat) + self.eps)) \
                .astype(tns.data.dtype)


def sample_terms(params, cfg, sample):
    """Forward one sample; returns (loss contribution pieces) as tensors."""
    coarse, out = network.forward(params, cfg, sample["partial"],
                                  sample["image"], sample["camera"])
    gt = np.asarray(sample["gt"], dtype=cfg.dtype)
    cd_coarse = geometry.chamfer(coarse, gt, "l2")
    if cfg.variant == "coarse-only":
        return coarse, out, cd_coarse, cd_coarse
    return coarse, out, cd_coarse, geometry.chamfer(out, gt, "l2")


def batch_loss(params, cfg, samples, alpha):
    """Mean over the batch of cd_coarse + alpha * cd_out.

    Returns (loss tensor, mean cd_coarse, mean cd_out, mean f-score) with the
    scalars as plain floats for logging.
    """
    terms = []
    cd_c = cd_o = fsc = 0.0
    for sample in samples:
        _, out, c, o = sample_terms(params, cfg, sample)
        if cfg.variant == "coarse-only":
            terms.append(c)
        else:
            terms.append(ad.add(c, ad.scale(o, alpha)))
        cd_c += c.item()
        cd_o += o.item()
        fsc += geometry.f_score(out.data, sample["gt"], cfg.fscore_tau)
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    n = len(samples)
    return ad.scale(total, 1.0 / n), cd_c / n, cd_o / n, fsc / n


def _state_arrays(params, opt, epoch, iteration):
    arrays = {f"param.{n}": t.data for n, t in params.items()}
    for n in opt.m:
        arrays[f"adam.m.{n}"] = opt.m[n]
        arrays[f"adam.v.{n}"] = opt.v[n]
    arrays["adam.t"] = np.array(opt.t, dtype=np.int64)
    arrays["train.epoch"] = np.array(epoch, dtype=np.int64)
    arrays["train.iter"] = np.array(iteration, dtype=np.int64)
    return arrays


def _restore_state(params, opt, arrays):
    for name, _ in params.items():
        key = f"param.{name}"
        if key not in arrays:
            raise TrainError(f"checkpoint is missing parameter '{name}'")
        params.set_value(name, arrays[key])
        opt.m[name] = np.array(arrays[f"adam.m.{name}"])
        opt.v[name] = np.array(arrays[f"adam.v.{name}"])
    opt.t = int(arrays["adam.t"])
    return int(arrays["train.epoch"]), int(arrays["train.iter"])


def _metrics_header(cfg):
    return (f"# training metrics, one row per logged optimizer step\n"
            f"# version = {__version__}, config_hash = "
            f"{config_mod.config_hash(cfg)}, seed = {cfg.seed}, "
            f"variant = {cfg.variant}\n"
            + ",".join(METRICS_COLUMNS) + "\n")


def append_metrics(path, row):
    with open(path, "a") as fh:
        fh.write("{epoch},{iter},{alpha:.6g},{lr:.6g},{cd_coarse:.8g},"
                 "{cd_out:.8g},{fscore:.6g}\n".format(**row))


def run_training(cfg, data_root, out_dir, resume=False, checkpoint_every=1,
                 log_every=10, progress=None):
    """Train on the 'train' split under data_root; artifacts land in out_dir.

    Writes checkpoint.bin at epoch boundaries (every checkpoint_every epochs
    and at the end) and appends to metrics.csv. With resume=True, continues
    from out_dir/checkpoint.bin and reproduces the uninterrupted run exactly.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "checkpoint.bin"
    metrics_path = out_dir / "metrics.csv"

    if cfg.deterministic:
        kernels.set_threads(1)
    ds = Dataset(data_root, "train")
    if ds.n_points != cfg.n_points:
        raise TrainError(
            f"dataset has {ds.n_points} points per cloud but the config "
            f"expects {cfg.n_points}; regenerate or adjust n_points")
    if ds.image_size != cfg.image_size:
        raise TrainError(
            f"dataset image size {ds.image_size} != config {cfg.image_size}")

    params = network.init_model(cfg)
    opt = Adam(params)
    rng = np.random.default_rng([cfg.seed, 7])
    start_epoch, iteration = 0, 0

    if resume:
        saved_cfg, arrays, rng_state = ckpt.load_checkpoint(ckpt_path)
        if config_mod.to_text(saved_cfg) != config_mod.to_text(cfg):
            raise TrainError(f"checkpoint {ckpt_path} was written with a "
                             "different config; refusing to resume")
        start_epoch, iteration = _restore_state(params, opt, arrays)
        if rng_state:
            rng.bit_generator.state = rng_state
    else:
        metrics_path.write_text(_metrics_header(cfg))

    objects = ds.objects
    n = len(objects)
    for epoch in range(start_epoch, cfg.epochs):
        lr = lr_at(cfg, epoch)
        order = rng.permutation(n)
        views = rng.integers(0, ds.n_views, size=n)
        for lo in range(0, n, cfg.batch_size):
            sel = order[lo:lo + cfg.batch_size]
            samples = [ds.load_view(*objects[j], int(views[j])) for j in sel]
            alpha = alpha_at(cfg, iteration)
            params.zero_grad()
            loss, cd_c, cd_o, fsc = batch_loss(params, cfg, samples, alpha)
            if not np.isfinite(loss.item()):
                names = ", ".join(f"{c}/{o}" for c, o in
                                  (objects[j] for j in sel))
                raise TrainError(f"loss is not finite at epoch {epoch} "
                                 f"iteration {iteration} (batch: {names})")
            ad.backward(loss)
            opt.step(lr)
            iteration += 1
            if iteration % log_every == 0 or iteration == 1:
                append_metrics(metrics_path, dict(
                    epoch=epoch, iter=iteration, alpha=alpha, lr=lr,
                    cd_coarse=cd_c, cd_out=cd_o, fscore=fsc))
        done = epoch + 1
        if done % checkpoint_every == 0 or done == cfg.epochs:
            ckpt.save_checkpoint(ckpt_path, cfg,
                                 _state_arrays(params, opt, done, iteration),
                                 rng.bit_generator.state)
        if progress:
            progress(f"epoch {done}/{cfg.epochs}: lr {lr:.3g} "
                     f"cd_coarse {cd_c:.5f} cd_out {cd_o:.5f}")
    return params, iteration


def load_model(path):
    """Rebuild (config, params) from a checkpoint file."""
    cfg, arrays, _ = ckpt.load_checkpoint(path)
    params = network.init_model(cfg)
    for name, _t in params.items():
        key = f"param.{name}"
        if key not in arrays:
            raise TrainError(f"checkpoint is missing parameter '{name}'")
        params.set_value(name, arrays[key])
    return cfg, params


def evaluate(cfg, params, ds, limit=None, progress=None):
    """Run the model over a split's (object, view) records.

    Returns (per-record rows, summary dict). Chamfer uses cfg.report_cd,
    F-score the cfg.fscore_tau threshold.
    """
    rows = []
    count = len(ds) if limit is None else min(limit, len(ds))
    for i in range(count):
        sample = ds.load_record(i)
        coarse, out = network.forward(params, cfg, sample["partial"],
                                      sample["image"], sample["camera"])
        gt = sample["gt"]
        rows.append({
            "category": sample["category"],
            "object": sample["object"],
            "view": sample["view"],
            "cd_coarse": geometry.chamfer(coarse.data, gt, cfg.report_cd).item(),
            "cd_out": geometry.chamfer(out.data, gt, cfg.report_cd).item(),
            "fscore": geometry.f_score(out.data, gt, cfg.fscore_tau),
        })
        if progress and (i + 1) % 16 == 0:
            progress(f"evaluated {i + 1}/{count}")
    summary = {
        "count": len(rows),
        "cd_coarse": float(np.mean([r["cd_coarse"] for r in rows])),
        "cd_out": float(np.mean([r["cd_out"] for r in rows])),
        "fscore": float(np.mean([r["fscore"] for r in rows])),
    }
    return rows, summary
