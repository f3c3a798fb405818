"""Success rates of blocking, delta and playback execution on a slow target arm."""

from crosspaint.harness import EpisodeConfig, Task, episode_seed, run_episode

N = 50
for task in ("reach", "lift", "stack"):
    seeds = [Task(task, episode_seed(0, task, i)) for i in range(N)]
    rates = {}
    for mode in ("blocking", "delta", "playback"):
        cfg = EpisodeConfig(mode=mode, target_gain=0.5)
        rates[mode] = sum(run_episode(t, cfg).success for t in seeds) / N
    print(f"{task:6s} " + "  ".join(f"{m} {r:4.0%}" for m, r in rates.items()))
