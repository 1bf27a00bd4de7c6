"""Two-sample alpha compositing evaluated by hand at 40 digits.

sigma1*delta1 = ln 2, sigma2*delta2 = 20, c1 = red, c2 = blue, t = (1, 3), black background.
"""
from mpmath import mp, mpf, exp, log

mp.dps = 40
a1 = 1 - exp(-log(2))
t2 = 1 - a1
a2 = 1 - exp(-mpf(20))
w1, w2 = a1, t2 * a2
final_t = t2 * (1 - a2)
print("w1", w1)
print("w2", w2)
print("color", [w1, 0, w2])
print("depth", (w1 * 1 + w2 * 3) / (w1 + w2))
print("final_transmittance", final_t)
print("blue_below_half", mpf("0.5") - w2)
