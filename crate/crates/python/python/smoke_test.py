"""Smoke test for the compiled module.

    cd crates/python && maturin develop --release && python python/smoke_test.py
"""

import convsynth

stats = convsynth.flesch_reading_ease("Go.")
assert round(stats.flesch_score, 2) == 121.22, stats
assert (stats.sentence_count, stats.word_count, stats.syllable_count) == (1, 1, 1)

try:
    convsynth.flesch_reading_ease("   ")
except ValueError:
    pass
else:
    raise AssertionError("empty text should raise")

assert convsynth.count_syllables("table") == 2
assert convsynth.meets_threshold(75.0, 75.0)
assert not convsynth.meets_threshold(74.99, 75.0)

assert abs(convsynth.cosine_similarity([1.0, 0.0], [4.0, 3.0]) - 0.8) < 1e-12

index = convsynth.QuestionIndex(0.8)
assert index.check_and_insert("a", [1.0, 0.0]) == (True, None, None)
assert index.check_and_insert("b", [4.0, 3.0])[0], "0.8 exactly is kept"
accepted, nearest, sim = index.check_and_insert("c", [1.0, 0.01])
assert not accepted and nearest == "a" and sim > 0.99
assert len(index) == 2 and "b" in index and "c" not in index

assert convsynth.pct_conversational([60.0, 59.9, 80.0]) == 66.7
assert "concise-finetune" in convsynth.PROMPT_PRESETS
assert convsynth.prompt("concise-finetune").startswith("You are a helpful assistant.")

print("smoke test passed")
