#!/usr/bin/env python3
"""Writes the bundled synthetic corpora under data/.

  toy_corpus.jsonl     50 claim/content pairs used for training
  toy_corpus_10.jsonl  the first 10 of them
  toy_heldout.jsonl    10 further pairs used as generation prompts and references

Output is deterministic.
"""

import json
import pathlib
import random

PEOPLE = ["Maria Lopez", "Daniel Okafor", "Anna Berg", "Kenji Sato", "Priya Nair", "Tomas Novak",
          "Lena Fischer", "Omar Haddad", "Grace Kim", "Victor Silva"]
PLACES = ["Iran", "Switzerland", "Brazil", "Canada", "Kenya", "Norway", "Chile", "Vietnam", "Portugal", "Ghana"]
ORGS = ["Harbor Energy", "Northwind Bank", "Civic Health Trust", "Atlas Motors", "Green Valley Farms",
        "Bluewater Shipping", "Summit Telecom", "Riverstone Labs"]
TOPICS = ["solar power", "rail transport", "clean water", "public schools", "rural clinics", "fishing quotas",
          "housing credit", "wildfire control"]
YEARS = list(range(1998, 2024))

REAL_CLAIMS = [
    "{person} says {org} will expand {topic} in {place} by {year}",
    "{org} reports steady growth in {topic} across {place}",
    "{place} approves new budget for {topic} in {year}",
    "{person} visits {place} to review {topic} projects",
]
FAKE_CLAIMS = [
    "{person} secretly sold {org} to fund {topic} scheme in {place}",
    "{org} hides collapse of {topic} in {place} since {year}",
    "{place} bans {topic} overnight after {person} scandal",
]
REAL_BODY = [
    "{person} spoke in {place} on Monday about {topic}.",
    "Officials from {org} said the plan follows a review completed in {year}.",
    "The program in {place} will be funded over three years.",
    "Local groups welcomed the focus on {topic} and asked for regular updates.",
    "{org} expects the first results before the end of {year2}.",
]
FAKE_BODY = [
    "Posts shared online claim that {person} acted without approval in {place}.",
    "No records from {org} support the story about {topic}.",
    "The same images were first published in {year} with a different caption.",
    "Officials in {place} said the report was false and asked people to check sources.",
    "Experts on {topic} described the rumor as misleading.",
]


def record(rng, idx, prefix):
    fake = idx % 3 == 2
    slots = {
        "person": rng.choice(PEOPLE),
        "place": rng.choice(PLACES),
        "org": rng.choice(ORGS),
        "topic": rng.choice(TOPICS),
        "year": rng.choice(YEARS),
    }
    slots["year2"] = slots["year"] + rng.randint(1, 3)
    claim = rng.choice(FAKE_CLAIMS if fake else REAL_CLAIMS).format(**slots)
    body = FAKE_BODY if fake else REAL_BODY
    n = rng.randint(3, 5)
    sentences = [s.format(**slots) for s in body[:n]]
    return {
        "id": f"{prefix}{idx:03d}",
        "claim": claim,
        "content": " ".join(sentences),
        "label": "fake" if fake else "real",
    }


def main():
    root = pathlib.Path(__file__).resolve().parent.parent / "data"
    root.mkdir(exist_ok=True)
    rng = random.Random(2024)
    train = [record(rng, i, "t") for i in range(50)]
    heldout = [record(rng, i, "h") for i in range(10)]
    for name, rows in [("toy_corpus.jsonl", train), ("toy_corpus_10.jsonl", train[:10]),
                       ("toy_heldout.jsonl", heldout)]:
        with open(root / name, "w") as f:
            for r in rows:
                f.write(json.dumps(r) + "\n")


if __name__ == "__main__":
    main()
