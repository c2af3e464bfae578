"""
Volume files and the command line
=================================

Every artifact is a QVOL file: a 64-byte little-endian header (dims, voxel
size, orientation, B0, TE) followed by the raw array.  The ``oaqsm``
command wraps the library; here it is driven in-process.
"""

import tempfile
from pathlib import Path

import numpy as np

from oaqsm import cli
from oaqsm.qvol import read_qvol, write_qvol
from oaqsm.volume import AcquisitionMeta, Volume3

work = Path(tempfile.mkdtemp())

vol = Volume3(np.arange(24, dtype=float).reshape(2, 3, 4), (1.0, 1.0, 2.0))
meta = AcquisitionMeta(7.0, 0.012, [0, 0.6, 0.8])
write_qvol(work / "v.qvol", vol, meta)
back, meta2 = read_qvol(work / "v.qvol")
print("round trip equal:", np.array_equal(back.data, vol.data), "voxel", back.voxel_size,
      "p", meta2.orientation, "bytes", (work / "v.qvol").stat().st_size)

###############################################################################
# simulate -> recon -> eval, the same calls as
# ``oaqsm simulate --out sim --orientation 0,0.6,0.8`` and so on.

sim = work / "sim"
cli.main(["simulate", "--out", str(sim), "--orientation", "0,0.6,0.8", "--seed", "5"])
cli.main(["recon", "--method", "tikhonov", "--in", str(sim / "localfield.qvol"),
          "--mask", str(sim / "mask.qvol"), "--out", str(work / "tik.qvol")])
cli.main(["eval", "--pred", str(work / "tik.qvol"), "--truth", str(sim / "chi.qvol"),
          "--mask", str(sim / "mask.qvol"), "--rois", str(sim / "rois.qvol"),
          "--out", str(work / "tik.csv")])
print((work / "tik.csv").read_text())
