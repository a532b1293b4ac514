"""Numerically verify the one-SGD-step decomposition of log-probability
change: predicted = -eta * A K G (softmax Jacobian, empirical NTK, loss
residual) against an actual parameter step, and show that the error shrinks
like eta^2.
"""

import numpy as np

from unlearnlab import dynamics as dy
from unlearnlab import lm
from unlearnlab.objectives import LossConfig


def main():
    arch = lm.ArchConfig(vocab_size=48, context_len=24, d_model=12,
                         n_layers=1, n_heads=2)
    store = lm.init_model(arch, 5)
    rng = np.random.default_rng(2)
    for k in store.entries:
        store.entries[k] = store.entries[k] + rng.normal(
            0, 0.08, store.entries[k].shape)
    print(f"model: {store.param_count()} parameters "
          f"(explicit Jacobians are fine at this size)")

    chi = dy.Chi(prompt=[1, 2, 3, 4], response=[5, 6, 7, 1])
    print("\n  eta        max |actual - predicted|")
    errs, etas = [], (1e-3, 5e-4, 2.5e-4)
    for eta in etas:
        reports = dy.akg_check(store, chi, chi, LossConfig(kind="ga"), eta)
        err = max(r.first_order_error for r in reports)
        errs.append(err)
        print(f"  {eta:8.1e}  {err:.3e}")
    slope = np.polyfit(np.log(etas), np.log(errs), 1)[0]
    print(f"\nlog-log slope = {slope:.3f}  (2.0 means a clean eta^2 "
          f"remainder)")

    r = dy.akg_check(store, chi, chi, LossConfig(kind="ga"), 1e-3)[0]
    y = chi.response[0]
    print(f"predicted change of log pi at the labeled token: "
          f"{r.predicted_delta_logpi[y]:+.5f} (ascent pushes it down)")


if __name__ == "__main__":
    main()
