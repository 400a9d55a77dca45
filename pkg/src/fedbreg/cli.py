"""Command line entry points: run, sweep, validate.

    fedbreg run <config>                          one experiment
    fedbreg sweep <config> --param K --values a,b re-run over one knob
    fedbreg validate <config>                     parse and check, no work

A run writes into its output directory (run.output_dir, optionally rooted at
$FEDBREG_OUTPUT_ROOT):

    metrics.csv           round,algo,seed,global_acc,global_loss,
                          personalized_acc,personalized_loss (one row per
                          evaluation point)
    deviation_round_<T>.csv   client,class,L,G,dL,dG at the final round
    model_final.bin       global parameters; 16-byte header (8-byte magic
                          "FEDBREG1" + little-endian uint64 dim) then the
                          float64 little-endian coefficients
    config_resolved.cfg   full resolved config; re-running it reproduces the
                          outputs byte for byte

A sweep writes each point under points/<param>=<value>/ plus
sweep_summary.csv with columns
param,value,final_global_acc,final_personalized_acc,best_personalized_acc.
"""

from __future__ import annotations

import argparse
import csv
import os
import struct
import sys
from dataclasses import dataclass

import numpy as np

from . import algorithms, data, federation, metrics, models
from .config import SCHEMA, ConfigError, ExperimentConfig, parse_config, serialize_config
from .param_space import (
    STREAM_DATA,
    STREAM_INIT,
    STREAM_PARTITION,
    STREAM_SERVER,
    RngStream,
    client_stream_id,
    seeded_init,
)

MODEL_MAGIC = b"FEDBREG1"

METRICS_HEADER = [
    "round",
    "algo",
    "seed",
    "global_acc",
    "global_loss",
    "personalized_acc",
    "personalized_loss",
]


@dataclass
class RunResult:
    output_dir: str
    metrics_path: str
    deviation_path: str
    model_path: str
    config_path: str
    reports: list


def resolve_output_dir(cfg: ExperimentConfig) -> str:
    out = cfg["run.output_dir"]
    root = os.environ.get("FEDBREG_OUTPUT_ROOT", "")
    return os.path.join(root, out) if root else out


def write_model_dump(path: str, params: np.ndarray):
    vec = np.ascontiguousarray(params, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<Q", vec.shape[0]))
        fh.write(vec.astype("<f8").tobytes())


def read_model_dump(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:8] != MODEL_MAGIC:
            raise ValueError(f"{path}: not a model dump (bad header)")
        (dim,) = struct.unpack("<Q", head[8:])
        payload = fh.read(8 * dim)
    if len(payload) != 8 * dim:
        raise ValueError(f"{path}: truncated model dump ({len(payload)} of {8 * dim} bytes)")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64)


def build_dataset(cfg: ExperimentConfig, stream: RngStream) -> data.Dataset:
    if cfg["dataset.source"] == "synthetic":
        return data.synth_generate(
            cfg["dataset.num_classes"],
            cfg["dataset.examples_per_class"],
            cfg["dataset.input_dim"],
            cfg["dataset.class_separation"],
            stream,
        )
    ds = data.load_idx(cfg["dataset.images_path"], cfg["dataset.labels_path"])
    if cfg["dataset.test_images_path"] or cfg["dataset.test_labels_path"]:
        extra = data.load_idx(cfg["dataset.test_images_path"], cfg["dataset.test_labels_path"])
        if extra.input_dim != ds.input_dim:
            raise ValueError(
                f"pooled IDX pairs disagree on input_dim: {ds.input_dim} vs {extra.input_dim}"
            )
        ds = data.Dataset(
            np.concatenate([ds.features, extra.features]),
            np.concatenate([ds.labels, extra.labels]),
            max(ds.num_classes, extra.num_classes),
        )
    return ds


def build_partition(cfg: ExperimentConfig, ds: data.Dataset, stream: RngStream) -> data.Partition:
    if cfg["dataset.partition"] == "label_skew":
        return data.partition_label_skew(
            ds,
            cfg["dataset.num_clients"],
            cfg["dataset.classes_per_client"],
            cfg["dataset.train_fraction"],
            stream,
        )
    return data.partition_dirichlet(
        ds,
        cfg["dataset.num_clients"],
        cfg["dataset.dirichlet_alpha"],
        cfg["dataset.min_samples"],
        cfg["dataset.train_fraction"],
        stream,
    )


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    cfg.check_files()
    out_dir = resolve_output_dir(cfg)
    os.makedirs(out_dir, exist_ok=True)
    seed = cfg["run.seed"]

    ds = build_dataset(cfg, RngStream(seed, STREAM_DATA))
    part = build_partition(cfg, ds, RngStream(seed, STREAM_PARTITION))
    spec = models.ModelSpec(
        cfg["model.kind"],
        ds.input_dim,
        ds.num_classes,
        cfg["model.hidden_dim"],
        cfg["model.leaky_slope"],
    )
    scale = cfg["model.init_scale"]
    w0 = seeded_init(
        spec.param_dim,
        RngStream(seed, STREAM_INIT),
        cfg["model.init_scheme"],
        low=-scale,
        high=scale,
        sigma=scale,
    )
    trainer_cfg = cfg.trainer_config()
    round_cfg = cfg.round_config()
    clients = [
        federation.ClientState(
            i,
            w0,
            w0,
            part.train_indices[i],
            part.test_indices[i],
            RngStream(seed, client_stream_id(i)),
        )
        for i in range(part.num_clients)
    ]
    trainer = algorithms.LocalTrainer(spec, ds.features, ds.labels, trainer_cfg)
    pool = np.sort(np.concatenate(part.test_indices))

    def eval_hook(server, clients_, round_index):
        eval_params = [trainer.eval_params(c, server.w) for c in clients_]
        acc, loss, weights = metrics.local_test(
            spec, eval_params, ds.features, ds.labels, part.test_indices
        )
        g_acc, g_loss = metrics.global_test(spec, server.w, ds.features, ds.labels, pool)
        deviation = None
        if round_index == round_cfg.total_rounds:
            deviation = metrics.loss_deviation(
                spec, eval_params, ds.features, ds.labels, part.test_indices, ds.num_classes
            )
        return metrics.EvalReport(
            round_index,
            acc,
            loss,
            weights,
            metrics.weighted_aggregate(acc, weights),
            metrics.weighted_aggregate(loss, weights),
            g_acc,
            g_loss,
            deviation,
        )

    server = federation.ServerState(w0, 0)
    server, reports = federation.run_training(
        server,
        clients,
        trainer,
        round_cfg,
        RngStream(seed, STREAM_SERVER),
        eval_hook,
        cfg["run.eval_cadence"],
    )

    metrics_path = os.path.join(out_dir, "metrics.csv")
    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for rep in reports:
            writer.writerow(
                [
                    rep.round_index,
                    cfg["trainer.strategy"],
                    seed,
                    rep.global_accuracy,
                    rep.global_loss,
                    rep.personalized_accuracy,
                    rep.personalized_loss,
                ]
            )

    deviation_path = os.path.join(out_dir, f"deviation_round_{round_cfg.total_rounds}.csv")
    dev = reports[-1].deviation
    with open(deviation_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["client", "class", "L", "G", "dL", "dG"])
        for i in range(len(clients)):
            for c in range(ds.num_classes):
                writer.writerow(
                    [
                        i,
                        c,
                        dev.local_matrix[i, c],
                        dev.global_matrix[i, c],
                        dev.local_deviation[i, c],
                        dev.global_deviation[i, c],
                    ]
                )

    model_path = os.path.join(out_dir, "model_final.bin")
    write_model_dump(model_path, server.w)
    config_path = os.path.join(out_dir, "config_resolved.cfg")
    with open(config_path, "w", encoding="utf-8") as fh:
        fh.write(serialize_config(cfg))
    return RunResult(out_dir, metrics_path, deviation_path, model_path, config_path, reports)


def run_sweep(cfg: ExperimentConfig, param: str, value_tokens: list[str]) -> str:
    if param not in SCHEMA:
        raise ConfigError(f"sweep parameter {param!r} is not a config key")
    if not value_tokens:
        raise ConfigError("sweep needs at least one value")
    base_out = resolve_output_dir(cfg)
    os.makedirs(base_out, exist_ok=True)
    rows = []
    for token in value_tokens:
        value = SCHEMA[param].parse(token, "<sweep>", 0)
        point_dir = os.path.join(cfg["run.output_dir"], "points", f"{param}={token}")
        point_cfg = cfg.replaced(param, value).replaced("run.output_dir", point_dir)
        try:
            result = run_experiment(point_cfg)
            reports = result.reports
            row = [
                param,
                token,
                reports[-1].global_accuracy,
                reports[-1].personalized_accuracy,
                max(rep.personalized_accuracy for rep in reports),
            ]
        except Exception as err:
            print(f"sweep point {param}={token} failed: {err}", file=sys.stderr)
            row = [param, token, float("nan"), float("nan"), float("nan")]
        rows.append(row)
    summary_path = os.path.join(base_out, "sweep_summary.csv")
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["param", "value", "final_global_acc", "final_personalized_acc", "best_personalized_acc"]
        )
        writer.writerows(rows)
    return summary_path


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="fedbreg",
        description="Deterministic personalized federated learning simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment from a config file")
    p_run.add_argument("config")
    p_sweep = sub.add_parser("sweep", help="run the config once per value of one parameter")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--param", required=True, help="config key to vary, e.g. trainer.lambda")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_val = sub.add_parser("validate", help="parse and validate a config, run nothing")
    p_val.add_argument("config")
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config)
        if args.command == "validate":
            cfg.check_files()
            print(f"OK: {args.config} is a valid {cfg['trainer.strategy']} experiment")
            return 0
        if args.command == "run":
            result = run_experiment(cfg)
            last = result.reports[-1]
            print(f"wrote {result.metrics_path}")
            print(f"wrote {result.deviation_path}")
            print(f"wrote {result.model_path}")
            print(
                f"final round {last.round_index}: "
                f"global_acc={last.global_accuracy:.4f} "
                f"personalized_acc={last.personalized_accuracy:.4f}"
            )
            return 0
        summary = run_sweep(cfg, args.param, [v for v in args.values.split(",") if v])
        print(f"wrote {summary}")
        return 0
    except (ConfigError, OSError, ValueError, RuntimeError, FloatingPointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
