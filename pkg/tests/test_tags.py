import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqcascade import tags
from seqcascade.errors import TagError
from seqcascade.symbols import EOT, SOT

from helpers import sample_patb_tag, sample_tiger_label

COMPLEX_TAG = "PV-PVSUFF_SUBJ:3MS+[PREP+PRON_2S]PVSUFF_IO:2S"
COMPLEX_COMPONENTS = [
    "PV", "PVSUFF", "_SUBJ", ":3", "@M", "@S", "+", "[", "PREP", "+",
    "PRON", "_2", "@S", "]", "PVSUFF", "_IO", ":2", "@S",
]


class TestComponentizePosTag:
    def test_reference_complex_tag(self):
        assert tags.componentize_pos_tag(COMPLEX_TAG) == [SOT, *COMPLEX_COMPONENTS, EOT]

    def test_atomic_tag(self):
        assert tags.componentize_pos_tag("NOUN") == [SOT, "NOUN", EOT]

    def test_reference_tag_round_trips(self):
        assert tags.reconstruct_pos_tag(tags.componentize_pos_tag(COMPLEX_TAG)) == COMPLEX_TAG

    def test_atomic_round_trip(self):
        assert tags.reconstruct_pos_tag([SOT, "NOUN", EOT]) == "NOUN"

    @pytest.mark.parametrize("tag", [
        "PV-PVSUFF", "DET+NOUN", "NOUN_QUANT", "PRON_1", "IV:2D",
        "PV_SUBJ:3MS", "[PREP+PRON_2S]", "NN+[DET+ADJ]NN", "IV-IVSUFF_DO:12MS",
    ])
    def test_hand_picked_round_trips(self, tag):
        assert tags.reconstruct_pos_tag(tags.componentize_pos_tag(tag)) == tag

    def test_digit_bundle_splitting(self):
        comps = tags.componentize_pos_tag("PV:12MS")
        assert comps == [SOT, "PV", ":12", "@M", "@S", EOT]

    def test_letter_bundle_kept_whole(self):
        assert tags.componentize_pos_tag("NN_QUANT") == [SOT, "NN", "_QUANT", EOT]

    @pytest.mark.parametrize("bad", ["", "PV--X", "-PV", "PV-", "PV-+X", "PV-:3",
                                     "PV SUBJ", "PV_", "PV:", "3MS", "PV@X"])
    def test_unparseable_tags_rejected(self, bad):
        with pytest.raises(TagError):
            tags.componentize_pos_tag(bad)

    def test_error_names_offending_span(self):
        with pytest.raises(TagError) as err:
            tags.componentize_pos_tag("PV&X")
        assert "&" in str(err.value)

    def test_grammar_fuzz_round_trip(self):
        rng = np.random.default_rng(42)
        for _ in range(2000):
            tag = sample_patb_tag(rng)
            comps = tags.componentize_pos_tag(tag)
            rebuilt = tags.reconstruct_pos_tag(comps)
            assert rebuilt == tag, f"{tag!r} -> {comps!r} -> {rebuilt!r}"
            # componentize . reconstruct . componentize is componentize
            assert tags.componentize_pos_tag(rebuilt) == comps


class TestReconstructPosTag:
    def test_requires_marker_pair(self):
        with pytest.raises(TagError):
            tags.reconstruct_pos_tag(["PV"])
        with pytest.raises(TagError):
            tags.reconstruct_pos_tag([SOT, "PV"])

    def test_rejects_nested_markers(self):
        with pytest.raises(TagError):
            tags.reconstruct_pos_tag([SOT, "PV", SOT, EOT])

    def test_rejects_malformed_at_component(self):
        with pytest.raises(TagError):
            tags.reconstruct_pos_tag([SOT, "@XY", EOT])
        with pytest.raises(TagError):
            tags.reconstruct_pos_tag([SOT, "", EOT])


class TestTigerLevels:
    def test_reference_label(self):
        assert tags.derive_tiger_levels("ADJA.PoS.Nom.Sg.Masc") == (
            "ADJA", "ADJA.PoS.Nom.Sg.Masc",
        )

    def test_label_without_features(self):
        assert tags.derive_tiger_levels("KON") == ("KON", "KON")

    def test_projection_property(self):
        rng = np.random.default_rng(1)
        labels = {sample_tiger_label(rng) for _ in range(500)}
        cores = {tags.derive_tiger_levels(lbl)[0] for lbl in labels}
        assert len(cores) <= len(labels)
        for lbl in labels:
            core, full = tags.derive_tiger_levels(lbl)
            assert tags.derive_tiger_levels(core)[0] == core
            assert full == lbl


class TestTigerComponentization:
    def test_reference_label(self):
        assert tags.componentize_tiger_label("ADJA.PoS.Nom.Sg.Masc") == [
            SOT, "ADJA", ".PoS", ".Nom", ".Sg", ".Masc", EOT,
        ]

    def test_atomic(self):
        assert tags.componentize_tiger_label("KON") == [SOT, "KON", EOT]

    def test_round_trip_sampled_labels(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            lbl = sample_tiger_label(rng)
            assert tags.reconstruct_tiger_label(tags.componentize_tiger_label(lbl)) == lbl

    @given(st.lists(
        st.text(alphabet="ABCDEFabcdef123", min_size=1, max_size=6),
        min_size=1, max_size=6,
    ))
    @settings(max_examples=200, deadline=None)
    def test_round_trip_property(self, parts):
        label = ".".join(parts)
        comps = tags.componentize_tiger_label(label)
        assert tags.reconstruct_tiger_label(comps) == label
