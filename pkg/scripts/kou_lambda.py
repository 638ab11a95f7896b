"""Resolve the Kou jump intensity from the FFT anchor and compare conventions.

The intensity is the one at which the Carr-Madan price for T = 0.25 equals
3.97383.  With it fixed, the script prints the Fourier price at T = 0.05
and the one-step engine price under both signs of the moved drift.
"""

from __future__ import annotations

from jumpsplit import harness_cli as hc
from jumpsplit.levy_models import KouParams
from jumpsplit.reference_pricers import FFTConfig, carr_madan


def main() -> None:
    base = hc.resolve_config("table-1")
    lam = hc.build_model(base).lam
    model = KouParams(lam, 0.3445, 3.0465, 3.0775)
    print(f"resolved lambda = {lam:.10f}")
    for t, quoted in ((0.25, 3.97383), (0.05, 1.545675)):
        default = carr_madan(model, 100, 100, 0.05, t, 0.15)
        fine = carr_madan(model, 100, 100, 0.05, t, 0.15, config=FFTConfig(1.25, 16384, 0.125))
        print(f"T={t}: Carr-Madan {default:.6f} (finer grid {fine:.6f}), target {quoted}")
    for t in (0.25, 0.05):
        for comp in ("exact", "forward"):
            cfg = hc.resolve_config(
                "cross-check",
                overrides={"option.maturity": str(t), "generator.compensator": comp},
                allow_override=True,
            )
            res = hc.run_cross_check(cfg)
            print(f"T={t} compensator={comp}: engine {res['engine']:.6f} "
                  f"vs {res['reference']:.6f} ({res['relative_error']:+.2e})")


if __name__ == "__main__":
    main()
