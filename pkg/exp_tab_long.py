import json
import time

from src.edl.world import World
from src.edl.tabular import (TabularGame, EpsGreedyConfig,
                             AlternatingSchedule, train_alternating)

t0 = time.time()
game = TabularGame(World())
log = open("exp_tab_long.log", "a", buffering=1)


def on_it(it, side, mean, q_t, a_t, curve):
    if it % 10 == 0 or mean >= 1.0:
        log.write(json.dumps({"it": it, "mean": round(mean, 4),
                              "secs": int(time.time() - t0)}) + "\n")


for seed in (0, 1):
    log.write(f"seed {seed}\n")
    res = train_alternating(game, AlternatingSchedule(10000, 400),
                            EpsGreedyConfig(0.6, rng_seed=seed),
                            on_iteration=on_it)
    log.write(json.dumps({"seed": seed, "iters": res.iterations_run,
                          "final": res.reward_curve[-1]}) + "\n")
log.write("done\n")
