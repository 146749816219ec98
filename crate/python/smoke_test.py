"""Smoke test for the dupforge_py extension.

Build it first:  pip install --no-build-isolation -e crates/python
"""

import math
import os
import tempfile

import dupforge_py as dp

POSTS = """<?xml version="1.0" encoding="utf-8"?>
<posts>
  <row Id="1" PostTypeId="1" AcceptedAnswerId="2" Title="sort a list" Tags="&lt;python&gt;&lt;list&gt;" Body="&lt;p&gt;how do I sort a list of 3 numbers&lt;/p&gt;&lt;pre&gt;&lt;code&gt;xs.sort()&lt;/code&gt;&lt;/pre&gt;" />
  <row Id="2" PostTypeId="2" ParentId="1" Body="&lt;p&gt;use sorted&lt;/p&gt;&lt;pre&gt;&lt;code&gt;sorted(xs)&lt;/code&gt;&lt;/pre&gt;" />
  <row Id="3" PostTypeId="1" Title="borrow checker" Tags="&lt;rust&gt;" Body="&lt;p&gt;the borrow checker rejects my loop&lt;/p&gt;&lt;pre&gt;&lt;code&gt;for x in v.iter_mut() {}&lt;/code&gt;&lt;/pre&gt;" />
  <row Id="4" PostTypeId="1" Title="join tables" Tags="&lt;sql&gt;" Body="&lt;p&gt;join two tables on a key column&lt;/p&gt;&lt;pre&gt;&lt;code&gt;SELECT * FROM a JOIN b ON a.id = b.id;&lt;/code&gt;&lt;/pre&gt;" />
</posts>
"""


def main():
    text, code = dp.preprocess_html("<p>sort 42 items</p><pre><code>xs.sort()</code></pre>")
    assert "42" not in text and code == ["xs.sort()"], (text, code)

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "Posts.xml")
        with open(path, "w") as f:
            f.write(POSTS)
        posts = dp.parse_posts(path)
        assert [p.post_id for p in posts] == [1, 2, 3, 4]
        questions = [p for p in posts if p.is_question]

        corpus = [p.text + " " + " ".join(p.code_blocks) for p in posts]
        vocab = dp.Vocabulary.train(corpus, vocab_size=200, min_frequency=1)
        ids = vocab.encode("sort a list")
        assert ids and all(i < len(vocab) for i in ids)
        vocab.save(os.path.join(tmp, "vocab.txt"))
        assert len(dp.Vocabulary.load(os.path.join(tmp, "vocab.txt"))) == len(vocab)

        encoder = dp.Encoder(len(vocab), preset="tiny", seed=1)
        assert len(encoder.cls(ids)) == encoder.hidden_size
        tower = dp.DupTower(encoder, hidden_dim=16, sequence_length=64, seed=1)
        v1 = tower.embed(questions[0].raw_html, vocab)
        v2 = tower.embed(questions[1].raw_html, vocab)
        dup, not_dup = tower.classify(v1, v2)
        assert math.isclose(dup + not_dup, 1.0, abs_tol=1e-9)

        index = dp.Index.build(posts, tower, vocab)
        assert len(index) == len(questions)
        for q in questions:
            top = index.search(tower.embed(q.raw_html, vocab), 1)[0]
            assert top[0] == q.post_id and abs(top[1] - 1.0) < 1e-9, (q.post_id, top)
        hits = index.query(questions[0].raw_html, tower, vocab, k=2)
        assert len(hits) == 2 and all(0.0 <= h.duplicate_probability <= 1.0 for h in hits)

        index.save(os.path.join(tmp, "index"))
        again = dp.Index.load(os.path.join(tmp, "index"))
        assert again.search(v1, 3) == index.search(v1, 3)

        try:
            dp.Encoder(10, preset="nope")
        except dp.DupforgeError:
            pass
        else:
            raise AssertionError("unknown preset accepted")

    bm25 = dp.Bm25([(1, "the cat sat"), (2, "the dog sat on the mat"), (3, "cats and dogs")])
    assert [d for d, _ in bm25.top_k("the cat", 2)] == [1, 2]

    m = dp.metrics([1, 1, 1, 0, 0, 0, 0, 0, 0, 0], [1, 1, 0, 1, 0, 0, 0, 0, 0, 0])
    assert abs(m["accuracy"] - 0.8) < 1e-12 and abs(m["f1"] - 2 / 3) < 1e-12
    assert m["ci_low"] <= m["accuracy"] <= m["ci_high"]

    assert dp.learning_rate(1e-5, 45_000, 90_000, 45_000) == 1e-5

    print("smoke test passed")


if __name__ == "__main__":
    main()
