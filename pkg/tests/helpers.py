import numpy as np

from sirnn.config import TrainConfig
from sirnn.corpus import DialogContext, SelectionSample, Turn, Vocab, sample_token_lists
from sirnn.model import Model
from sirnn.trainer import init_params

WORDS = [f"w{i}" for i in range(12)]


def random_sample(rng, n_speakers=4, T=5, R=3, blank=0.3, responder_in_context=True,
                  doc_id="r") -> SelectionSample:
    names = [f"s{i}" for i in range(n_speakers)]
    turns = []
    for _ in range(T):
        s = names[rng.integers(n_speakers)]
        others = [n for n in names if n != s]
        a = None if rng.random() < blank else others[rng.integers(len(others))]
        toks = tuple(WORDS[k] for k in rng.integers(len(WORDS), size=rng.integers(0, 5)))
        turns.append(Turn(s, a, toks))
    ctx = DialogContext(turns)
    spk = ctx.speakers
    if responder_in_context or len(spk) == 1:
        responder = spk[rng.integers(len(spk))] if len(spk) > 1 else "outsider"
    else:
        responder = "outsider"
    cands = [s for s in spk if s != responder]
    truth = cands[rng.integers(len(cands))]
    candidates = [tuple(WORDS[k] for k in rng.integers(len(WORDS), size=rng.integers(1, 5)))
                  for _ in range(R)]
    return SelectionSample(ctx, responder, candidates, truth, int(rng.integers(R)), doc_id=doc_id)


def eq1_sample(responder="a1", candidates=(("u", "four"), ("u", "five"))) -> SelectionSample:
    """a2 says u1 to a1, a1 says u2 to a3, a3 says u3 to a2."""
    ctx = DialogContext([Turn("a2", "a1", ("u", "one")), Turn("a1", "a3", ("u", "two")),
                         Turn("a3", "a2", ("u", "three"))])
    return SelectionSample(ctx, responder, list(candidates), "a3", 0)


def make_model(samples, mode="sirnn", shared=False, d_w=5, d_s=4, d_u=3, init=0.5, seed=0,
               dtype="float64", **kw) -> Model:
    cfg = TrainConfig(mode=mode, shared_igrus=shared, d_w=d_w, d_s=d_s, d_u=d_u, init_range=init,
                      seed=seed, dtype=dtype, **kw)
    vocab = Vocab.build(sample_token_lists(samples), d_w, seed)
    return Model(cfg, init_params(cfg, vocab=vocab), vocab)


def numpy_params(model: Model):
    P = {k: np.asarray(t.data, dtype=np.float64) for k, t in model.store.params.items()}
    return P, np.asarray(model.vocab.vectors, dtype=np.float64), model.vocab.index


def zero_params(model: Model) -> None:
    for t in model.store.params.values():
        t.data[...] = 0.0


PARTITION_CHAT = [
    ("VeryBewitching", "nicomachus", "anything i should be concerned about before i do it?"),
    ("nicomachus", "VeryBewitching", "always back up before partitioning."),
    ("VeryBewitching", "nicomachus", "i would have assumed that, i was wondering more if this is something "
                                     "that tends to be touch and go, want to know if i should put coffee on : )"),
    ("TechMonger", None, "it was hybernating. i can ping it now"),
    ("TechMonger", None, "why does my router pick up disconnected devices when i reset my device list? or how"),
    ("Ionic", None, "because the dhcp refresh interval hasn't passed yet?"),
    ("TechMonger", None, "so dhcp refresh is different than device list refresh?"),
    ("D33p", "TechMonger", "what an enlightenment @techmonger : )"),
    ("BuzzardBuzz", None, "dhcp refresh for all clients is needed when you change your subnet ip"),
    ("BuzzardBuzz", None, "if you want them to work together"),
    ("Ionic", "BuzzardBuzz", "uhm, no."),
    ("chingao", "TechMonger", "nicomachus asked this way at the beginning: "
                              "is the machine that you 're trying to ping turned on?"),
]

PARTITION_RESPONSES = [
    "i have tried with this program y-ppa manager, yet still doesn't work.",
    "install the package linux-generic, that will install the kernel and the headers if they are not installed",
    "if it's the last partition on the disk, it won't take long. if gparted has to copy data to move "
    "another partition too, it can take a couple hours.",
]


def partition_chat_sample() -> SelectionSample:
    """Two interleaved threads; the responder was last addressed by VeryBewitching, while chingao spoke last."""
    from sirnn.corpus import tokenize_truncate
    ctx = DialogContext([Turn(s, a, tuple(tokenize_truncate(u))) for s, a, u in PARTITION_CHAT])
    cands = [tuple(tokenize_truncate(u)) for u in PARTITION_RESPONSES]
    return SelectionSample(ctx, "nicomachus", cands, "VeryBewitching", 2, doc_id="partition")
