import numpy as np
import pytest

from skewrec import corpus


def synth_log_lines(n_users, n_items, rng, min_len=3, max_len_actions=12,
                    distinct=False):
    """Random interaction lines, chronological per user.

    distinct=True samples without replacement per user, so a held-out target
    never also appears in the prefix (exchangeability for null-model checks).
    """
    lines = []
    for u in range(n_users):
        length = int(rng.integers(min_len, max_len_actions + 1))
        if distinct:
            items = rng.choice(np.arange(1, n_items + 1), size=length, replace=False)
        else:
            items = rng.integers(1, n_items + 1, size=length)
        for it in items:
            lines.append(f"{u} {int(it)}")
    return lines


def build_corpus(tmp_path, lines, max_len=20):
    path = tmp_path / "log.txt"
    path.write_text("\n".join(lines) + "\n")
    log = corpus.load_interactions(str(path))
    seqs, dropped = corpus.build_sequences(log, max_len)
    split = corpus.split_leave_one_out(seqs, log.n_items, max_len, log.item_ids, dropped)
    cooc = corpus.build_cooc(split)
    return log, split, cooc


@pytest.fixture
def small_corpus(tmp_path):
    rng = np.random.default_rng(7)
    lines = synth_log_lines(40, 25, rng, min_len=4, max_len_actions=10)
    return build_corpus(tmp_path, lines, max_len=12)


def make_cooc(n_items, item_count, pair_counts):
    """CoocStats from explicit {(i, j): count} pairs."""
    from scipy import sparse

    counts = np.zeros(n_items + 1, dtype=np.int64)
    for i, c in item_count.items():
        counts[i] = c
    mat = sparse.lil_matrix((n_items + 1, n_items + 1), dtype=np.int64)
    for (i, j), c in pair_counts.items():
        mat[i, j] = c
        mat[j, i] = c
    return corpus.CoocStats(counts, mat.tocsr())
