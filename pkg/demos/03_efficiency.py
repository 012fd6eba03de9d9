"""Count multiply-accumulates analytically and time the default model.

Run: python3 demos/03_efficiency.py
"""

from linn import BinauralRenderer
from linn.cli import bench_report
from linn.losses import count_macs

model = BinauralRenderer(seed=0)

# %% Where the arithmetic goes, per second of audio
r = count_macs(model.cfg, 1.0, model.param_count())
print(f"parameters          {r.param_count}")
print(f"IBC MACs per query  {r.ibc_macs_per_query}")
print(f"queries per second  {r.frames_per_second * r.queries_per_frame:.0f}")
print(f"network GMACs/s     {r.macs_per_second_audio / 1e9:.2f}")
print(f"  warp net share    {r.warp_macs_per_second / r.macs_per_second_audio:.2e}")
print(f"DSP MACs/s (extra)  {r.dsp_macs_per_second / 1e6:.1f} M")
print(r.basis)

# %% Measured speed on this machine
rep = bench_report(model, seconds=5.0, repetitions=3)
print(f"real-time factor: {rep.rtf:.3f} (1 thread), {rep.rtf_parallel:.3f} "
      f"({rep.threads_parallel} threads)")
