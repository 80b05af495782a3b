"""Bundled synthetic shared-prefix dataset for training-dynamics checks.

Each pair shares a long "reasoning" prefix drawn from a sparse Markov chain,
then hits one of a few decision tokens where the rejected response makes a
systematic mistake (``w_k``) and the chosen one takes the right step
(``c_k``).  Short tails and a final ``= answer`` follow.  This mirrors
rectified data: most tokens shared, a small decision-critical divergence.

The fixture trains with ``beta = 1``; with the toy's short sequences the
default ``beta = 0.1`` needs tens of nats of log-ratio before any
reward-based loss saturates.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .pipeline.dataset import ContrastivePair, read_dataset, read_jsonl, write_dataset, write_jsonl
from .pipeline.verify import Task
from .policy import PolicyParams, Vocab, load_policy, save_policy

N_QUESTIONS = 4
N_STEPS = 12
N_MODES = 3
N_ANSWERS = 4
PREFIX_LEN = 20
TAIL_LEN = 3
FANOUT = 2
INIT_SCALE = 0.5
CHAIN_SEED = 1000
INIT_SEED = 7

# training recipe the dynamics checks are calibrated against
TRAIN_RECIPE = {
    "learning_rate": 0.5,
    "optimizer": "sgd",
    "beta": 1.0,
    "batch_size": 32,
    "max_steps": 300,
    "epochs": 1000,
    "seed": 0,
}


@dataclass
class Fixture:
    vocab: Vocab
    initial_policy: PolicyParams
    train_pairs: list[ContrastivePair]
    heldout_pairs: list[ContrastivePair]
    tasks: list[Task]


def fixture_vocab() -> Vocab:
    names = (
        [f"q{i}" for i in range(N_QUESTIONS)]
        + [f"s{i}" for i in range(N_STEPS)]
        + [f"d{k}" for k in range(N_MODES)]
        + [f"c{k}" for k in range(N_MODES)]
        + [f"w{k}" for k in range(N_MODES)]
        + ["="]
        + [f"a{i}" for i in range(N_ANSWERS)]
    )
    return Vocab.from_content(names)


def build_fixture(seed: int = 0, n_train: int = 200, n_heldout: int = 50, n_tasks: int = 64) -> Fixture:
    vocab = fixture_vocab()
    tok = vocab.id_of
    chain = np.random.default_rng(CHAIN_SEED)
    successors = {i: chain.choice(N_STEPS, FANOUT, replace=False) for i in range(N_STEPS)}
    starts = {q: int(chain.integers(N_STEPS)) for q in range(N_QUESTIONS)}
    rng = np.random.default_rng(seed)

    def walk(first: int, length: int) -> list[int]:
        out = [first]
        while len(out) < length:
            out.append(int(rng.choice(successors[out[-1]])))
        return [tok(f"s{i}") for i in out]

    pairs = []
    for i in range(n_train + n_heldout):
        q = int(rng.integers(N_QUESTIONS))
        answer = q % N_ANSWERS
        mode = int(rng.integers(N_MODES))
        shared = walk(starts[q], PREFIX_LEN) + [tok(f"d{mode}")]
        good_tail = walk(int(rng.integers(N_STEPS)), TAIL_LEN)
        bad_tail = walk(int(rng.integers(N_STEPS)), TAIL_LEN)
        wrong = int(rng.choice([a for a in range(N_ANSWERS) if a != answer]))
        chosen = shared + [tok(f"c{mode}")] + good_tail + [tok("="), tok(f"a{answer}"), vocab.eos]
        rejected = shared + [tok(f"w{mode}")] + bad_tail + [tok("="), tok(f"a{wrong}"), vocab.eos]
        pairs.append(
            ContrastivePair.build(
                [tok(f"q{q}")], rejected, chosen,
                oracle_id="synthetic", ground_truth=f"a{answer}", task_id=f"fx-{i:04d}",
            )
        )
    tasks = [
        Task(f"task-{i:03d}", [tok(f"q{i % N_QUESTIONS}")], f"a{(i % N_QUESTIONS) % N_ANSWERS}")
        for i in range(n_tasks)
    ]
    init = PolicyParams.random(vocab, order=1, scale=INIT_SCALE, seed=INIT_SEED)
    return Fixture(vocab, init, pairs[:n_train], pairs[n_train:], tasks)


FILES = {
    "policy": "policy.json",
    "train": "train.jsonl",
    "heldout": "heldout.jsonl",
    "tasks": "tasks.jsonl",
}


def write_fixture(fixture: Fixture, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_policy(fixture.initial_policy, d / FILES["policy"])
    write_dataset(fixture.train_pairs, d / FILES["train"])
    write_dataset(fixture.heldout_pairs, d / FILES["heldout"])
    write_jsonl(d / FILES["tasks"], "spot-tasks", (t.to_dict() for t in fixture.tasks))


def read_tasks(path) -> list[Task]:
    return [Task.from_dict(rec) for _, rec in read_jsonl(path, "spot-tasks")]


def read_fixture(directory) -> Fixture:
    d = Path(directory)
    policy = load_policy(d / FILES["policy"])
    return Fixture(
        policy.vocab,
        policy,
        read_dataset(d / FILES["train"]),
        read_dataset(d / FILES["heldout"]),
        read_tasks(d / FILES["tasks"]),
    )


def bundled_dir() -> Path:
    return Path(str(resources.files("spot").joinpath("data").joinpath("fixture")))


def load_bundled() -> Fixture:
    return read_fixture(bundled_dir())
