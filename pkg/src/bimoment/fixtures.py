"""Offline synthetic fixture in the layout of a ratings data set.

The real ratings data (hundreds of users, hundreds of films, user
demographics, film genres) is not vendored; this generator produces a
statistically similar stand-in so the end-to-end pipeline and its tests
run offline: a tab-separated edge list, two attribute tables, a
genre-group mapping file, and a handful of deliberately low-degree
"planted" nodes for exercising the degree filter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

GENRES = (
    "action", "adventure", "animation", "children", "comedy", "crime",
    "documentary", "drama", "fantasy", "film-noir", "horror", "musical",
    "mystery", "romance", "sci-fi", "thriller", "war", "western",
)

_SEX_GROUP = {
    "action": "M", "adventure": "M", "crime": "M", "film-noir": "M",
    "horror": "M", "sci-fi": "M", "thriller": "M", "war": "M", "western": "M",
    "animation": "F", "children": "F", "comedy": "F", "documentary": "F",
    "drama": "F", "fantasy": "F", "musical": "F", "mystery": "F", "romance": "F",
}

_AGE_GROUP = {
    "animation": "young", "children": "young", "comedy": "young",
    "fantasy": "young", "horror": "young", "sci-fi": "young",
    "action": "mid", "adventure": "mid", "crime": "mid", "drama": "mid",
    "mystery": "mid", "romance": "mid", "thriller": "mid",
    "documentary": "old", "film-noir": "old", "musical": "old",
    "war": "old", "western": "old",
}


@dataclass(frozen=True)
class Fixture:
    """Paths and ground truth of a generated fixture."""

    edges: Path
    actor_attrs: Path
    event_attrs: Path
    mapping: Path
    planted_actors: tuple
    planted_events: tuple
    min_degree: int
    gamma: tuple


def make_ratings_fixture(
    out_dir,
    m: int = 200,
    n: int = 150,
    seed: int = 20260810,
    n_planted: int = 5,
    min_degree: int = 10,
    gamma: tuple = (0.36, 0.25),
) -> Fixture:
    """Generate the fixture into ``out_dir`` and return its description.

    Planted nodes get strongly negative heterogeneity, so their degrees
    sit far below ``min_degree`` while everyone else sits far above; a
    degree filter at ``min_degree`` removes exactly the planted set.
    Planted nodes with no edge at all are given one, so they appear in
    the edge list.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    users = [f"u{i + 1:04d}" for i in range(m)]
    movies = [f"f{j + 1:04d}" for j in range(n)]
    sex = rng.choice(["M", "F"], size=m, p=[0.71, 0.29])
    age = rng.choice(["young", "mid", "old"], size=m, p=[0.15, 0.70, 0.15])
    genre = rng.choice(GENRES, size=n)

    alpha = rng.normal(0.3, 0.35, size=m)
    beta = rng.normal(0.3, 0.35, size=n)
    planted_actors = rng.choice(m, size=n_planted, replace=False)
    planted_events = rng.choice(n, size=n_planted, replace=False)
    alpha[planted_actors] = -7.0
    beta[planted_events] = -7.0

    z1 = np.zeros((m, n))
    z2 = np.zeros((m, n))
    for j in range(n):
        z1[:, j] = sex == _SEX_GROUP[genre[j]]
        z2[:, j] = age == _AGE_GROUP[genre[j]]
    eta = alpha[:, None] + beta[None, :] + gamma[0] * z1 + gamma[1] * z2
    weights = (rng.random((m, n)) < 1.0 / (1.0 + np.exp(-eta))).astype(float)

    # guarantee every planted node shows up in the edge list
    for i in planted_actors:
        if weights[i].sum() == 0:
            j = rng.integers(n)
            weights[i, j] = 1.0
    for j in planted_events:
        if weights[:, j].sum() == 0:
            i = rng.integers(m)
            weights[i, j] = 1.0

    edges = out_dir / "edges.tsv"
    with open(edges, "w", encoding="utf-8") as fh:
        rows, cols = np.nonzero(weights)
        for i, j in zip(rows, cols):
            fh.write(f"{users[i]}\t{movies[j]}\n")

    actor_attrs = out_dir / "users.tsv"
    with open(actor_attrs, "w", encoding="utf-8") as fh:
        fh.write("id\tsex\tage_class\n")
        for i in range(m):
            fh.write(f"{users[i]}\t{sex[i]}\t{age[i]}\n")

    event_attrs = out_dir / "movies.tsv"
    with open(event_attrs, "w", encoding="utf-8") as fh:
        fh.write("id\tgenre\n")
        for j in range(n):
            fh.write(f"{movies[j]}\t{genre[j]}\n")

    mapping = out_dir / "mapping.json"
    with open(mapping, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "mappings": [
                    {
                        "name": "sex_genre_match",
                        "actor_attr": "sex",
                        "event_attr": "genre",
                        "groups": _SEX_GROUP,
                    },
                    {
                        "name": "age_genre_match",
                        "actor_attr": "age_class",
                        "event_attr": "genre",
                        "groups": _AGE_GROUP,
                    },
                ]
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")

    return Fixture(
        edges=edges,
        actor_attrs=actor_attrs,
        event_attrs=event_attrs,
        mapping=mapping,
        planted_actors=tuple(users[i] for i in sorted(planted_actors)),
        planted_events=tuple(movies[j] for j in sorted(planted_events)),
        min_degree=min_degree,
        gamma=tuple(gamma),
    )
