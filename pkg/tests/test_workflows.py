"""Workflow model: parsing, padding, concatenation, content identity."""

import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowsmc.errors import (
    HorizonExceededError,
    NoMarkersError,
    TooManyStepsError,
)
from flowsmc.workflows import (
    Kind,
    Step,
    Workflow,
    concat,
    id_of,
    parse_annotated,
    render,
)

SIX_STEP_SOURCE = '''\
import re
import statistics

class Workflow:
    async def __call__(self, problem, entry_point):
        # Step 1: Generate initial solution
        solutions = await self.llm.call_llm(messages=[problem], temperature=0.2,
                                            num_of_response=2,
                                            agent_role="expert programmer",
                                            instructions="Return only code.")
        # Step 2: Test solutions
        results = [exec_code(s, entry_point) for s in solutions]
        # Step 3: If any solution passes tests, return it
        for s, r in zip(solutions, results):
            if r == "no error":
                return s
        # Step 4: If no solution passes, try to fix the best solution
        fixed = await self.llm.call_llm(messages=[solutions[0]], temperature=0.1,
                                        num_of_response=1, agent_role="debugger",
                                        instructions="Fix the code.")
        # Step 5: Test fixed solution
        if exec_code(fixed[0], entry_point) == "no error":
            return fixed[0]
        # Step 6: Final fallback attempt
        return fixed[0]
'''


def reference_marker_offsets(source: str) -> list[int]:
    """Independent tokenizer: byte offsets of marker lines, found per line."""
    offsets, pos = [], 0
    for line in source.splitlines(keepends=True):
        if re.match(r"^\s*#\s*[Ss]tep\s+\d+\s*:", line):
            offsets.append(pos)
        pos += len(line)
    return offsets


class TestParseAnnotated:
    def test_six_step_fixture(self):
        w = parse_annotated(SIX_STEP_SOURCE, horizon=6)
        assert w.real_length == 6
        assert w.kind is Kind.COMPLETE
        assert "Generate initial solution" in w.steps[0].text
        assert "import re" in w.steps[0].text  # preamble attaches to step 1
        assert "Final fallback" in w.steps[5].text

    def test_padding_to_horizon(self):
        w = parse_annotated("# Step 1:\nx", horizon=5)
        assert len(w) == 5
        assert w.real_length == 1
        assert w.kind is Kind.COMPLETE
        assert [s.is_padding for s in w.steps] == [False, True, True, True, True]

    def test_noncontiguous_markers_renumbered_positionally(self):
        source = "# Step 2:\nalpha\n# Step 5:\nbeta\n# Step 9:\ngamma\n"
        w = parse_annotated(source, horizon=4)
        assert [s.index for s in w.steps[:3]] == [1, 2, 3]
        # independent check: split on reference byte offsets
        offsets = reference_marker_offsets(source)
        segments = [
            source[offsets[i]: offsets[i + 1] if i + 1 < len(offsets) else len(source)]
            for i in range(len(offsets))
        ]
        assert len(segments) == 3
        for step, segment in zip(w.steps[:3], segments):
            body = segment.split(":", 1)[1]
            assert step.text == body

    def test_no_markers(self):
        with pytest.raises(NoMarkersError):
            parse_annotated("def f():\n    return 1\n", horizon=5)

    def test_too_many_steps(self):
        source = "".join(f"# Step {i}:\nbody{i}\n" for i in range(1, 7))
        with pytest.raises(TooManyStepsError):
            parse_annotated(source, horizon=5)

    def test_marker_case_and_spacing(self):
        w = parse_annotated("  #  STEP  1 : first\nbody\n# step 2:second\n", horizon=2)
        assert w.real_length == 2
        assert "first" in w.steps[0].text
        assert w.steps[1].text == "second\n"


class TestConcat:
    def test_fills_to_complete(self):
        w = concat(Workflow.prefix(["a"], 3), ["b", "c"])
        assert w.kind is Kind.COMPLETE
        assert w.trajectory == ("a", "b", "c")

    def test_empty_suffix_identity(self):
        prefix = Workflow.prefix(["a"], 3)
        assert concat(prefix, []) == prefix

    def test_horizon_exceeded(self):
        with pytest.raises(HorizonExceededError):
            concat(Workflow.prefix(["a", "b"], 3), ["c", "d"])

    def test_length_additivity(self):
        for n_prefix in range(3):
            for n_suffix in range(4 - n_prefix):
                prefix = Workflow.prefix([f"p{i}" for i in range(n_prefix)], 4)
                suffix = [f"s{i}" for i in range(n_suffix)]
                assert len(concat(prefix, suffix)) == n_prefix + n_suffix

    def test_accepts_step_objects(self):
        w = concat(Workflow.prefix(["a"], 2), [Step(7, "b")])
        assert w.trajectory == ("a", "b")
        assert w.steps[1].index == 2  # renumbered


class TestWorkflowInvariants:
    def test_prefix_rejects_embedded_padding(self):
        with pytest.raises(ValueError):
            Workflow.prefix(["a", "", "b"], 5)

    def test_indices_must_be_consecutive(self):
        with pytest.raises(ValueError):
            Workflow((Step(1, "a"), Step(3, "b")), 3, Kind.PREFIX)

    def test_kind_matches_horizon(self):
        with pytest.raises(ValueError):
            Workflow((Step(1, "a"),), 3, Kind.COMPLETE)

    def test_step_index_positive(self):
        with pytest.raises(ValueError):
            Step(0, "a")

    def test_complete_pads(self):
        w = Workflow.complete(["a", "b"], 4)
        assert w.texts == ("a", "b", "", "")
        assert w.trajectory == ("a", "b")


class TestIdentity:
    def test_padding_invariance(self):
        bare = Workflow.prefix(["a", "b"], 2)
        padded = Workflow.complete(["a", "b"], 5)
        assert id_of(bare) == id_of(padded)

    def test_order_sensitivity(self):
        assert id_of(Workflow.prefix(["a", "b"], 3)) != id_of(Workflow.prefix(["b", "a"], 3))

    def test_no_collisions_across_random_sequences(self):
        rng = np.random.default_rng(7)
        seen = set()
        sequences = set()
        while len(sequences) < 1000:
            length = int(rng.integers(1, 5))
            seq = tuple(
                "".join(rng.choice(list("abcxyz123 \n")) for _ in range(int(rng.integers(1, 12))))
                for _ in range(length)
            )
            if all(seq[-1:] != ("",) and t != "" for t in seq):
                sequences.add(seq)
        for seq in sequences:
            seen.add(id_of(Workflow.prefix(list(seq), 6)).digest)
        assert len(seen) == 1000

    def test_single_character_sensitivity(self):
        base = Workflow.prefix(["alpha", "beta"], 3)
        tweaked = Workflow.prefix(["alpha", "bet/"], 3)
        assert id_of(base) != id_of(tweaked)

    def test_id_cached_on_instance(self):
        w = Workflow.prefix(["a"], 2)
        assert w.id is w.id


step_text = st.text(
    alphabet=st.characters(
        codec="ascii", exclude_characters="\x1e"
    ),
    min_size=1,
    max_size=40,
).filter(
    lambda t: t.strip() != "" and not re.search(r"^\s*#\s*[Ss]tep\s+\d+\s*:", t, re.M)
)


class TestRenderRoundTrip:
    @settings(max_examples=200, deadline=None)
    @given(st.lists(step_text, min_size=1, max_size=5))
    def test_parse_render_identity_on_newline_terminated_texts(self, texts):
        texts = [t if t.endswith("\n") else t + "\n" for t in texts]
        w = Workflow.complete(texts, 5)
        assert parse_annotated(render(w), 5).trajectory == w.trajectory

    def test_parse_is_stable_under_rerender(self):
        w = parse_annotated(SIX_STEP_SOURCE, horizon=6)
        again = parse_annotated(render(w), horizon=6)
        assert again.trajectory == w.trajectory
        assert render(again) == render(w)

    def test_padding_never_rendered(self):
        w = Workflow.complete(["a"], 5)
        assert render(w) == "# Step 1:a"
