import numpy as np
import pytest

from ktfm import (
    CounterState,
    EncodingConfig,
    EncodingError,
    Triplet,
    encode_dataset,
    encode_extra,
    load_qmatrix,
    update_counters,
)
from tests.conftest import EXAMPLE_ENCODED, EXAMPLE_LABELS, FULL_CONFIG


class TestWorkedExample:
    def test_full_encoding_is_exact(self, example_triplets, example_qmatrix):
        dm = encode_dataset(example_triplets, example_qmatrix, FULL_CONFIG, n_students=2)
        assert np.array_equal(dm.densify(), EXAMPLE_ENCODED)
        assert dm.labels.tolist() == EXAMPLE_LABELS

    def test_block_layout_order(self, example_triplets, example_qmatrix):
        dm = encode_dataset(example_triplets, example_qmatrix, FULL_CONFIG, n_students=2)
        assert dm.space.block_names == ("users", "items", "skills", "wins", "fails")
        assert dm.space.width == 14

    def test_counters_mask_to_current_item_skills(self, example_triplets, example_qmatrix):
        # before the 4th attempt student 1 has two wins on skill 0, but item 2
        # exercises skills {1, 2}, so the wins block must not mention skill 0
        dm = encode_dataset(example_triplets, example_qmatrix, FULL_CONFIG, n_students=2)
        wins_block = dm.densify()[3, 8:11]
        assert wins_block.tolist() == [0.0, 2.0, 0.0]


class TestEncodeDataset:
    def test_single_triplet_has_no_history(self, example_qmatrix):
        dm = encode_dataset([Triplet(0, 1, 1)], example_qmatrix, FULL_CONFIG, n_students=2)
        dense = dm.densify()[0]
        assert dense[8:14].tolist() == [0.0] * 6

    def test_one_hot_blocks_have_exactly_one_entry(self, example_qmatrix):
        rng = np.random.default_rng(23)
        triplets = [
            Triplet(int(rng.integers(0, 4)), int(rng.integers(0, 3)), int(rng.integers(0, 2)))
            for _ in range(80)
        ]
        dm = encode_dataset(triplets, example_qmatrix, FULL_CONFIG, n_students=4)
        dense = dm.densify()
        assert (dense[:, :4].sum(axis=1) == 1).all()
        assert (dense[:, 4:7].sum(axis=1) == 1).all()

    def test_skills_block_matches_item_skills(self, example_qmatrix):
        triplets = [Triplet(0, 2, 1), Triplet(0, 0, 0)]
        dm = encode_dataset(triplets, example_qmatrix, FULL_CONFIG, n_students=1)
        dense = dm.densify()
        assert dense[0, 4:7].tolist() == [0.0, 1.0, 1.0]
        assert dense[1, 4:7].tolist() == [0.0, 0.0, 0.0]

    def test_counters_match_replay_oracle(self, example_qmatrix):
        rng = np.random.default_rng(7)
        n_students = 5
        triplets = [
            Triplet(
                int(rng.integers(0, n_students)),
                int(rng.integers(0, 3)),
                int(rng.integers(0, 2)),
            )
            for _ in range(200)
        ]
        dm = encode_dataset(triplets, example_qmatrix, FULL_CONFIG, n_students=n_students)
        dense = dm.densify()
        wins_off = dm.space.offset("wins")
        fails_off = dm.space.offset("fails")

        tally: dict[tuple[int, int, int], int] = {}
        for r, t in enumerate(triplets):
            for k in example_qmatrix.kc(t.item):
                assert dense[r, wins_off + k] == tally.get((t.student, k, 1), 0)
                assert dense[r, fails_off + k] == tally.get((t.student, k, 0), 0)
            for k in example_qmatrix.kc(t.item):
                key = (t.student, k, t.outcome)
                tally[key] = tally.get(key, 0) + 1

    def test_attempts_equal_wins_plus_fails(self, example_qmatrix):
        rng = np.random.default_rng(31)
        triplets = [
            Triplet(int(rng.integers(0, 3)), int(rng.integers(0, 3)), int(rng.integers(0, 2)))
            for _ in range(120)
        ]
        afm = EncodingConfig(use_skills=True, use_attempts=True)
        pfa = EncodingConfig(use_skills=True, use_wins=True, use_fails=True)
        dm_afm = encode_dataset(triplets, example_qmatrix, afm, n_students=3)
        dm_pfa = encode_dataset(triplets, example_qmatrix, pfa, n_students=3)
        attempts = dm_afm.densify()[:, 3:6]
        wins_plus_fails = dm_pfa.densify()[:, 3:6] + dm_pfa.densify()[:, 6:9]
        assert np.array_equal(attempts, wins_plus_fails)

    def test_deterministic_serialization(self, example_triplets, example_qmatrix, tmp_path):
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        encode_dataset(example_triplets, example_qmatrix, FULL_CONFIG, n_students=2).save(a)
        encode_dataset(example_triplets, example_qmatrix, FULL_CONFIG, n_students=2).save(b)
        assert a.read_bytes() == b.read_bytes()

    def test_student_out_of_range(self, example_qmatrix):
        with pytest.raises(EncodingError):
            encode_dataset([Triplet(2, 0, 1)], example_qmatrix, FULL_CONFIG, n_students=2)

    def test_item_out_of_range(self, example_qmatrix):
        with pytest.raises(EncodingError):
            encode_dataset([Triplet(0, 3, 1)], example_qmatrix, FULL_CONFIG, n_students=2)

    def test_unknown_ids_drop_their_one_hots(self, example_qmatrix):
        dm = encode_dataset([Triplet(-1, 1, 1)], example_qmatrix, FULL_CONFIG, n_students=2)
        dense = dm.densify()[0]
        assert dense[:2].tolist() == [0.0, 0.0]
        assert dense[3] == 1.0  # the item one-hot survives

    def test_extras_length_mismatch(self, example_qmatrix):
        config = FULL_CONFIG.replace(extra_columns=(("mode", 2),))
        with pytest.raises(EncodingError):
            encode_dataset(
                [Triplet(0, 0, 1)],
                example_qmatrix,
                config,
                n_students=2,
                extras={"mode": [0, 1]},
            )

    def test_missing_qmatrix_when_skills_needed(self):
        with pytest.raises(EncodingError):
            encode_dataset([Triplet(0, 0, 1)], None, FULL_CONFIG, n_students=1)


class TestUpdateCounters:
    def test_correct_answer_increments_wins(self, example_qmatrix):
        state = CounterState.zeros(3, 3)
        new = update_counters(state, Triplet(1, 1, 1), example_qmatrix)
        assert new.wins[1].tolist() == [1, 1, 0]
        assert new.fails.sum() == 0
        assert state.wins.sum() == 0  # original untouched

    def test_empty_skill_set_changes_nothing(self, example_qmatrix):
        state = CounterState.zeros(3, 3)
        new = update_counters(state, Triplet(0, 0, 1), example_qmatrix)
        assert new.wins.sum() == 0 and new.fails.sum() == 0

    def test_attempts_identity_over_random_updates(self, example_qmatrix):
        rng = np.random.default_rng(13)
        state = CounterState.zeros(4, 3)
        touches = np.zeros((4, 3), dtype=int)
        for _ in range(50):
            t = Triplet(int(rng.integers(0, 4)), int(rng.integers(0, 3)), int(rng.integers(0, 2)))
            state = update_counters(state, t, example_qmatrix)
            for k in example_qmatrix.kc(t.item):
                touches[t.student, k] += 1
        assert np.array_equal(state.attempts, touches)

    def test_counters_never_decrease(self, example_qmatrix):
        rng = np.random.default_rng(17)
        state = CounterState.zeros(2, 3)
        for _ in range(30):
            t = Triplet(int(rng.integers(0, 2)), int(rng.integers(0, 3)), int(rng.integers(0, 2)))
            new = update_counters(state, t, example_qmatrix)
            assert (new.wins >= state.wins).all()
            assert (new.fails >= state.fails).all()
            assert np.array_equal(new.attempts, new.wins + new.fails)
            state = new


class TestLoadQMatrix:
    def test_worked_example_file(self, example_log_csv):
        _, qfile = example_log_csv
        q = load_qmatrix(qfile)
        assert q.n_items == 3 and q.n_skills == 3
        assert q.kc(1) == (0, 1)  # second item exercises the first two skills
        assert q.kc(0) == ()

    def test_all_zero_matrix_is_valid(self, tmp_path):
        path = tmp_path / "q.csv"
        path.write_text("0,0\n0,0\n")
        q = load_qmatrix(path)
        assert q.kc(0) == () and q.kc(1) == ()

    def test_non_binary_cell_rejected(self, tmp_path):
        path = tmp_path / "q.csv"
        path.write_text("0,1\n0,2\n")
        with pytest.raises(EncodingError):
            load_qmatrix(path)

    def test_ragged_rows_rejected(self, tmp_path):
        path = tmp_path / "q.csv"
        path.write_text("0,1\n1\n")
        with pytest.raises(EncodingError):
            load_qmatrix(path)


class TestEncodeExtra:
    def _space(self, config):
        return config.feature_space(2, 3, 3)

    def test_single_category_one_hot(self):
        config = EncodingConfig(use_users=True, extra_columns=(("tutor_mode", 4),))
        space = self._space(config)
        pairs = encode_extra(space, config, {"tutor_mode": 2})
        assert pairs == [(space.column("tutor_mode", 2), 1.0)]

    def test_no_extras_gives_empty_fragment(self):
        config = EncodingConfig(use_users=True)
        assert encode_extra(self._space(config), config, {}) == []

    def test_two_columns_two_nonzeros(self):
        config = EncodingConfig(use_users=True, extra_columns=(("a", 3), ("b", 5)))
        pairs = encode_extra(self._space(config), config, {"a": 1, "b": 4})
        assert len(pairs) == 2
        assert all(v == 1.0 for _, v in pairs)

    def test_value_outside_cardinality(self):
        config = EncodingConfig(use_users=True, extra_columns=(("a", 3),))
        with pytest.raises(EncodingError):
            encode_extra(self._space(config), config, {"a": 3})


class TestEncodingConfig:
    def test_needs_at_least_one_block(self):
        with pytest.raises(EncodingError):
            EncodingConfig()

    def test_attempts_exclusive_with_wins(self):
        with pytest.raises(EncodingError):
            EncodingConfig(use_skills=True, use_attempts=True, use_wins=True)

    def test_attempts_exclusive_with_fails(self):
        with pytest.raises(EncodingError):
            EncodingConfig(use_skills=True, use_attempts=True, use_fails=True)

    def test_extra_cannot_shadow_builtin(self):
        with pytest.raises(EncodingError):
            EncodingConfig(use_users=True, extra_columns=(("wins", 2),))
