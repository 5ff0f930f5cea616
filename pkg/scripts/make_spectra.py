"""Regenerate the bundled spectra in src/pumpmap/data.

Both curves are smooth synthetic approximations, not measured data:

* LED emission: Gaussian centred at 570 nm, 31 nm FWHM (yellow-green
  565-575 nm dominant wavelength chip).
* 0.1 % pentacene:p-terphenyl absorption: three vibronic Gaussians
  (0-0 band at 589 nm plus replicas near 548 and 510 nm) on a weak
  baseline, scaled so the LED-weighted mean is 2.0 mm^-1.
"""

from pathlib import Path

import numpy as np

from pumpmap.source import Spectrum, effective_absorption, write_spectrum

DATA = Path(__file__).resolve().parents[1] / "src" / "pumpmap" / "data"


def gauss(x, mu, sigma):
    return np.exp(-0.5 * ((x - mu) / sigma) ** 2)


def main():
    wl_e = np.arange(520.0, 630.5, 1.0)
    emission = Spectrum(wl_e, np.round(gauss(wl_e, 570.0, 13.0), 6), "emission")

    wl_a = np.arange(450.0, 700.5, 1.0)
    shape = (gauss(wl_a, 589.0, 5.0) + 0.55 * gauss(wl_a, 548.0, 9.0)
             + 0.35 * gauss(wl_a, 510.0, 9.0) + 0.02)
    raw = Spectrum(wl_a, shape, "absorption")
    scale = 2.0 / effective_absorption(emission, raw)
    absorption = Spectrum(wl_a, np.round(shape * scale, 6), "absorption")

    write_spectrum(emission, DATA / "led_le_cg_p2aq_emission.csv")
    write_spectrum(absorption, DATA / "ptc_ptp_0p1pct_absorption.csv")
    print("effective absorption:", effective_absorption(emission, absorption), "mm^-1")


if __name__ == "__main__":
    main()
