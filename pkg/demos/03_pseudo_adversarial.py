"""Manufacturing evasions without an attacker.

Each malware sample is nudged with random feature additions drawn from the
perturbable set until the detector calls it benign. The result keeps the
deep half of the sample byte-identical, so it looks exactly like what a
real problem-space attacker could ship.
"""
import numpy as np

from malguard import data, detectors, problem_space, pseudo, quantify, synthetic

cfg = synthetic.GeneratorConfig(
    dim=1200, ps_size=120, n_benign=2400, n_malicious=800,
    ips_mode_bits=60, malware_bits=120, n_perturbations=20, seed=11,
)
bench = synthetic.generate(cfg)
train, _, _ = data.split_random(bench.dataset, (0.5, 0.2, 0.3), 1)
det = detectors.train_linear(train, seed=2)
apps = problem_space.builtin_quantification_apps(cfg.dim, bench.layout.main_activity)
part = quantify.quantify(bench.dataset.space, apps, list(bench.perturbations))

mal = train.by_label(data.MALICIOUS)
pam = pseudo.generate(mal, det, part, budget=100, flip_limit=20, seed=3)
print(f"{len(pam)}/{len(mal)} malware samples turned detector-benign")

ips = set(part.ips)
by_id = {s.id: s for s in mal}
ok = sum(
    1 for p in pam
    if not det.is_malicious(p.vector)
    and p.vector.as_set() & ips == by_id[p.source_id].vector.as_set() & ips
)
print(f"{ok}/{len(pam)} verified benign with the deep half untouched")

attempts = np.array([p.attempts_used for p in pam])
added = np.array([len(p.vector) - len(by_id[p.source_id].vector) for p in pam])
print(f"attempts: median {int(np.median(attempts))}, max {attempts.max()}")
print(f"features added: median {int(np.median(added))}, max {added.max()}")
