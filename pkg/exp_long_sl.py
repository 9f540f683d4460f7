"""Long SL probe: when does full-corpus training learn first-round gating?"""
import numpy as np, time, json
from collections import Counter
from src.edl.world import World
from src.edl.nets import QBotNet, ABotNet, DialogRunner
from src.edl.training import generate_oracle_corpus, supervised_step, AdamState
from src.edl.rng import SplitMix64, derive_seed
from src.edl.evaluation import NeuralAgents

world = World()
instances = world.enumerate_instances()
corpus = generate_oracle_corpus(world, protocol_seed=0)
q_net = QBotNet(derive_seed(0, "q-net"), n_tasks=world.n_tasks)
a_net = ABotNet(derive_seed(0, "a-net"))
adam = AdamState()
items = list(corpus.dialogs)

out = open("/root/pkg/exp_long_sl.log", "w")
t0 = time.time()
for epoch in range(1500):
    order = list(range(len(items)))
    rng2 = SplitMix64(derive_seed(0, "sl-shuffle", epoch))
    rng2.shuffle(order)
    for i in range(0, len(order), 32):
        supervised_step((q_net, a_net), [items[j] for j in order[i:i+32]], adam)
    if epoch % 25 == 24:
        a_err = Counter()
        for dlg in items:
            runner = DialogRunner(q_net, a_net, dlg.instance)
            for t, rnd in enumerate(dlg.rounds):
                q_tok, a_tok = rnd.question[0], rnd.answer[0]
                runner.question_logprobs()
                a_err[t] += 1 - int(np.argmax(runner.answer_logprobs(q_tok).value) == a_tok)
                runner.commit_round(q_tok, a_tok)
        agents = NeuralAgents(q_net, a_net, world, n_rounds=10)
        n_acc = sum(int(world.check_prediction(i, agents.greedy_episode(i).final_guess))
                    for i in instances)
        row = {"epoch": epoch, "a_err": [a_err[t] for t in range(10)],
               "acc": round(n_acc / 384, 4), "secs": round(time.time() - t0)}
        out.write(json.dumps(row) + "\n")
        out.flush()
        if n_acc == 384:
            break
out.write("done\n")
out.close()
