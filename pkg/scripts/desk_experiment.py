"""Desk-scale experiment: synthetic scene, every decomposition and optimizer.

Trains the scaled-down network on a fixed synthetic scene for each
(decomposition, optimizer) pair and prints one metrics line per run.  With
--out the runs' history CSVs and reports are kept.

    python scripts/desk_experiment.py --out runs/desk
"""
import argparse
import time
from pathlib import Path

from jigsawhsi import decompose, graph, hsi_io, metrics, tiler, trainer

OPTIMIZERS = {"adadelta": 0.1, "adam": 1e-3, "sgd": 0.01}


def run(cube, labels, method, optimizer, seed, out=None):
    reduced, _ = decompose.reduce_cube(cube, method, 6, seed)
    ts = tiler.build_dataset(reduced, labels, 9)
    train_set, test_set = tiler.stratified_split(ts, 0.3, seed)
    spec = graph.NetworkSpec(window=9, channels=6, num_classes=labels.num_classes, max_filter_size=5,
                             branch_units=16, dense_units=(64, 32))
    cfg = trainer.TrainConfig(optimizer=optimizer, learning_rate=OPTIMIZERS[optimizer], batch_size=64,
                              max_epochs=60, patience=10, seed=seed)
    model, hist = trainer.train(graph.build(spec, seed=seed), train_set, cfg)
    cm, _ = trainer.evaluate(model, test_set)
    if out is not None:
        run_dir = Path(out) / f"{method.lower()}_{optimizer}"
        run_dir.mkdir(parents=True, exist_ok=True)
        hist.write_csv(run_dir / "history.csv")
        metrics.write_report(cm, run_dir / "report.txt", run_dir / "confusion.csv", title=f"{method} + {optimizer}")
    return cm, hist


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=1337)
    ap.add_argument("--methods", default="PCA,FA,TSVD,NMF")
    ap.add_argument("--optimizers", default="adadelta,adam,sgd")
    ap.add_argument("--out")
    args = ap.parse_args(argv)

    cube, labels = hsi_io.generate_synthetic_scene(64, 64, 32, 6, 18, 0.05, seed=7)
    print(f"{'method':<6} {'optimizer':<9} {'OA':>6} {'Kappa':>6} {'AA':>6} {'best':>4} {'stop':>4} {'sec':>6}")
    for method in args.methods.split(","):
        for opt in args.optimizers.split(","):
            t0 = time.perf_counter()
            cm, hist = run(cube, labels, method, opt, args.seed, args.out)
            print(f"{method:<6} {opt:<9} {metrics.overall_accuracy(cm):6.2f} {metrics.cohen_kappa(cm):6.2f} "
                  f"{metrics.average_accuracy(cm):6.2f} {hist.best_epoch:4d} {hist.stopped_epoch:4d} "
                  f"{time.perf_counter() - t0:6.1f}")


if __name__ == "__main__":
    main()
