"""Classical WLS state estimation and its missing-data fragility.

Gauss-Newton recovers the exact state from complete noiseless measurements,
degrades gracefully with noise, and fails outright (rank deficiency) once
random masking deletes enough rows. The failure rate versus missing ratio is
the motivation for the learned estimator.
"""

import numpy as np

from gridtwin import (
    NoConvergence,
    RankDeficient,
    WlsProblem,
    admittance_matrix,
    default_schema,
    estimate_wls,
    fixture_path,
    load_fixture,
    measure,
    solve_power_flow,
    voltages_to_state,
)

feeder, nominal = load_fixture(fixture_path("feeder_8bus"))
schema = default_schema(feeder, vmag_buses=["b2", "b4", "b6", "b8"],
                        vang_nodes=["b5:a", "b5:b", "b5:c", "b8:a"])
Y = admittance_matrix(feeder)
sol = solve_power_flow(feeder, nominal, tol=1e-10)
x_true = voltages_to_state(feeder, sol.v)
z_clean = measure(sol.v, Y, schema)

est = estimate_wls(WlsProblem.from_schema(schema, Y, z_clean))
print(f"noiseless recovery: max |x - x_true| = {np.max(np.abs(est.x - x_true)):.2e} "
      f"in {est.iterations} iterations")

rng = np.random.default_rng(0)
z_noisy = z_clean + schema.sigmas * rng.standard_normal(len(schema))
est = estimate_wls(WlsProblem.from_schema(schema, Y, z_noisy))
err = np.max(np.abs(est.x - x_true))
print(f"noisy recovery:     max |x - x_true| = {err:.2e} "
      f"(weighted objective {est.residual:.1f})")

print("\nfailure rate under random masking (100 seeds each):")
for alpha in (0.0, 0.1, 0.2, 0.3, 0.4):
    failures = 0
    for seed in range(100):
        mask = np.random.default_rng((int(alpha * 100), seed)).random(
            len(schema)) < alpha
        try:
            estimate_wls(WlsProblem.from_schema(schema, Y, z_noisy, mask=mask))
        except (RankDeficient, NoConvergence):
            failures += 1
    bar = "#" * (failures // 4)
    print(f"  alpha={alpha:.1f}: {failures:3d}% {bar}")
