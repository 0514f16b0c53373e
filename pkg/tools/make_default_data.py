"""Regenerate the synthetic default kit, frequency table and profiles shipped in the package.

The locus layout follows a common 16-locus kit: four dye lanes, 4 bp
repeats except where noted, a sex-typing locus. Allele ranges, amplicon
sizes and counts are synthetic, chosen only to be plausible.
"""

from pathlib import Path

import numpy as np

from pcrpgf import io
from pcrpgf.sample import Contributor, FrequencyTable, Kit, KitAllele, KitLocus, NoiseModel

OUT = Path(__file__).resolve().parents[1] / "src" / "pcrpgf" / "data"

# name, dye, smallest allele, largest allele, size of smallest allele, extra variants
LAYOUT = [
    ("D8S1179", "blue", 8, 19, 123, ()),
    ("D21S11", "blue", 24, 38, 185, ("30.2", "31.2", "32.2")),
    ("D7S820", "blue", 6, 15, 255, ()),
    ("CSF1PO", "blue", 6, 15, 305, ()),
    ("D3S1358", "green", 12, 19, 112, ()),
    ("TH01", "green", 4, 11, 163, ("9.3",)),
    ("D13S317", "green", 8, 15, 217, ()),
    ("D16S539", "green", 5, 15, 252, ()),
    ("D2S1338", "green", 15, 28, 289, ()),
    ("D19S433", "yellow", 9, 17, 102, ("13.2", "14.2")),
    ("vWA", "yellow", 11, 21, 155, ()),
    ("TPOX", "yellow", 6, 13, 222, ()),
    ("D18S51", "yellow", 9, 26, 264, ()),
    ("D5S818", "red", 7, 16, 134, ()),
    ("FGA", "red", 17, 30, 215, ("22.2",)),
]
P = tuple((k, 0.85) for k in ("g", "g_d", "h", "h_d", "a", "a_d"))


def build():
    rng = np.random.default_rng(20260114)
    loci, raw = [], {}
    amel = KitLocus("AMEL", "red", 6, (KitAllele("X", 107.0), KitAllele("Y", 113.0)), P, 0.0)
    for name, dye, lo, hi, size0, extra in LAYOUT:
        names = [str(n) for n in range(lo, hi + 1)] + list(extra)
        alleles = []
        for a in names:
            bp = size0 + 4 * (float(a.split(".")[0]) - lo) + (int(a.split(".")[1]) if "." in a else 0)
            alleles.append(KitAllele(a, float(bp), 0.004, 0.001, 0.001))
        loci.append(KitLocus(name, dye, 4, tuple(alleles), P, 0.021))
        centre = (lo + hi) / 2
        counts = {}
        for a in names:
            x = float(a.split(".")[0])
            w = np.exp(-0.5 * ((x - centre) / ((hi - lo) / 4)) ** 2)
            counts[a] = int(rng.poisson(300 * w)) + (0 if "." not in a else 2)
        raw[name] = counts
    loci.insert(13, amel)
    return Kit(tuple(loci)), FrequencyTable(raw)


def profiles(kit, freqs, n=4):
    rng = np.random.default_rng(7)
    out = {}
    for i in range(n):
        g = {}
        for l in kit.loci:
            if l.is_sex:
                g[l.name] = ("X", "Y") if i % 2 == 0 else ("X", "X")
                continue
            al = list(freqs.freqs[l.name])
            p = np.array([freqs.freqs[l.name][a] for a in al])
            pick = sorted(rng.choice(len(al), 2, p=p))
            g[l.name] = tuple(sorted((al[pick[0]], al[pick[1]]), key=lambda a: float(a)))
        cid = f"P{i + 1}"
        out[cid] = Contributor(cid, g)
    return out


def noise(kit, scale=4.0, cutoff=100):
    """Geometric baseline noise per dye lane, mean about ``scale`` RFU."""
    r = np.arange(cutoff + 1)
    pmf = NoiseModel.from_values(np.exp(-r / scale))
    return {dye: pmf for dye in sorted({l.dye for l in kit.loci})}


if __name__ == "__main__":
    kit, freqs = build()
    OUT.mkdir(parents=True, exist_ok=True)
    io.write_kit(kit, OUT / "kit.csv")
    io.write_frequencies(freqs, OUT / "frequencies.csv")
    io.write_profiles(profiles(kit, freqs), OUT / "profiles.csv")
    io.write_noise(noise(kit), OUT / "noise.csv")
