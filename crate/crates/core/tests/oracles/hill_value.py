"""High-precision hill-curve evaluation used to freeze expected values."""
from mpmath import mp, mpf, power

mp.dps = 50


def hill(e_inf, ec50, hs, dose):
    e_inf, ec50, hs, dose = map(mpf, (e_inf, ec50, hs, dose))
    return e_inf + (1 - e_inf) / (1 + power(10, hs * (ec50 - dose)))


if __name__ == "__main__":
    print(mp.nstr(hill("0.2", 6, 1, 8), 25))
