"""Default pipeline with long RL tail: where does the pinned default saturate?"""
import json, time
from src.edl.world import World
from src.edl.training import TrainSettings, train_neural

out = open("/root/pkg/exp_default_rl.log", "w")
t0 = time.time()

def on_epoch(row, q_net, a_net, adam):
    out.write(json.dumps({k: (round(v, 4) if isinstance(v, float) else v)
                          for k, v in row.items()}) + "\n")
    out.flush()

res = train_neural(TrainSettings(seed=0, rl_epochs=150), on_epoch=on_epoch)
out.write(f"done {time.time()-t0:.0f}s\n")
out.close()
