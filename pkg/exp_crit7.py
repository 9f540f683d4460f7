import json
import time

from src.edl.world import World
from src.edl.training import TrainSettings, train_neural

t0 = time.time()
world = World()
log = open("exp_crit7.log", "a", buffering=1)
for seed in (0, 1, 2):
    sl = train_neural(TrainSettings(seed=seed, sl_epochs=5, rl_epochs=0,
                                    corpus_fraction=0.25), world=world)
    row_sl = sl.metrics[-1]
    rl = train_neural(TrainSettings(seed=seed, sl_epochs=5, rl_epochs=20,
                                    corpus_fraction=0.25), world=world)
    row_rl = rl.metrics[-1]
    log.write(json.dumps({
        "seed": seed,
        "sl_pct": row_sl["percentile_rank"],
        "rl_pct": row_rl["percentile_rank"],
        "gain": row_rl["percentile_rank"] - row_sl["percentile_rank"],
        "secs": int(time.time() - t0),
    }) + "\n")
log.write("done\n")
