"""
A synthetic state-year mortality panel
======================================

Draw the default 50 x 18 panel, look at how persistent the log rates are
within states, and save it in the CSV layout the rest of the package reads.
"""

import numpy as np
import matplotlib.pyplot as plt

from didsim import SynthConfig, generate_panel, write_panel
from didsim.metrics import acf, pooled_lag1_autocorr

panel = generate_panel(SynthConfig())
print(panel.shape, "mean annual deaths:", round(panel.mean_annual_deaths()))

###############################################################################
# Rates are right-skewed across states and drift upward over time.

rate = panel.crude_rate
print("rate quantiles:", np.percentile(rate, [5, 50, 95]).round(1))

fig, ax = plt.subplots()
ax.plot(panel.years, rate.T, color="grey", alpha=0.4, lw=0.8)
ax.plot(panel.years, np.median(rate, axis=0), color="k", lw=2, label="median state")
ax.set_yscale("log")
ax.set_ylabel("deaths per 100,000")
ax.legend()

###############################################################################
# Within-state persistence after removing the common year effect.  This is the
# serial correlation that makes unadjusted two-way fixed effects standard
# errors too small.

lr = np.log(rate)
within = lr - lr.mean(axis=0)
print("pooled lag-1 autocorrelation:", round(pooled_lag1_autocorr(within), 3))
print("ACF of one state:", acf(within[0], 3).round(2))

###############################################################################
# Write the panel; ``didsim validate panel.csv`` checks it.

write_panel(panel, "panel.csv")
plt.show()
