"""Phantom NMSE of the conventional, CRB-designed and ZZB-designed schedules.

Reads the schedules written by run_desk_optimization.py and sweeps the
noise level and seed; the design noise level is SNR 30.

    python scripts/compare_schemes.py --schedules results/desk --out results/compare.csv
"""

import argparse
from pathlib import Path

from zzb_mrf import io
from zzb_mrf.config import REFERENCE_SPECS
from zzb_mrf.mrf_pipeline import compare_schemes, desk_phantom
from zzb_mrf.seqopt import reference_noise


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--schedules", default="results/desk")
    ap.add_argument("--out", default="results/compare.csv")
    ap.add_argument("--snr", default="10,30,100")
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()

    d = Path(args.schedules)
    schedules = {n: io.read_schedule(d / f"{n}.csv") for n in ("conventional", "crb", "zzb") if (d / f"{n}.csv").exists()}
    phantom = desk_phantom()
    rows = []
    for snr in (float(x) for x in args.snr.split(",")):
        sigma2 = reference_noise(schedules["conventional"], REFERENCE_SPECS, snr).sigma2
        for seed in range(args.seeds):
            for r in compare_schemes(schedules, phantom, sigma2, seed=seed):
                rows.append((r.scheme, r.t1_nmse, r.t2_nmse, r.sigma2, r.n_frames, r.seed))
                print(f"snr {snr:>5g} seed {seed} {r.scheme:>12}: T1 {r.t1_nmse:.4g}  T2 {r.t2_nmse:.4g}")
    io.write_csv(args.out, io.COMPARISON_HEADER, rows)


if __name__ == "__main__":
    main()
