"""Writes the bundled synthetic tabular datasets.

Each file imitates the shape of a common fairness benchmark (row count,
number of protected columns, mix of numeric and categorical features) with
labels drawn from a logistic model in which the protected columns shift the
base rate. Rerunning with the same numpy version reproduces the files.
"""

from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parent


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def write(name, columns, n_missing, rng):
    n = len(next(iter(columns.values())))
    header = list(columns)
    rows = [[columns[c][i] for c in header] for i in range(n)]
    for i in rng.choice(n, size=n_missing, replace=False):
        j = rng.integers(1, len(header))
        rows[i][j] = "?"
    with open(OUT / f"{name}.csv", "w") as f:
        f.write(",".join(header) + "\n")
        for r in rows:
            f.write(",".join(fmt(v) for v in r) + "\n")


def fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{v:.4f}"
    return str(v)


def communities(rng, n=1994):
    # twelve racial-composition percentages, binarized at the median
    shares = rng.dirichlet(np.ones(4) * 0.8, size=n)
    race = {}
    for j, tag in enumerate(["black", "white", "asian", "hisp"]):
        race[f"pct_{tag}"] = shares[:, j] * 100
        race[f"pct_{tag}_young"] = np.clip(shares[:, j] * 100 + rng.normal(0, 8, n), 0, 100)
        race[f"pct_{tag}_foreign"] = np.clip(shares[:, j] * 60 + rng.normal(0, 6, n), 0, 100)
    income = rng.lognormal(10.4, 0.4, n) - 300 * race["pct_black"]
    unemployed = np.clip(rng.normal(6, 2, n) + 0.05 * race["pct_black"] + 0.03 * race["pct_hisp"], 0, None)
    rent = np.clip(rng.normal(700, 150, n) + 0.004 * income, 100, None)
    density = rng.lognormal(7, 1, n)
    logit = (
        -1.3
        + 0.35 * (unemployed - 6)
        - 0.00004 * (income - income.mean())
        + 0.25 * (np.log(density) - 7)
        + 0.02 * (race["pct_black"] - 25)
    )
    score = logit + rng.logistic(0, 1, n)
    label = (score > np.quantile(score, 0.7)).astype(int)
    cols = {"violent_high": label, "income": income, "unemployed": unemployed, "rent": rent, "density": density}
    cols.update(race)
    write("communities", cols, 12, rng)


def adult(rng, n=2020):
    age = rng.integers(17, 80, n)
    sex = rng.choice(["Male", "Female"], n, p=[0.67, 0.33])
    race = rng.choice(
        ["White", "Black", "Asian-Pac-Islander", "Amer-Indian-Eskimo", "Other"],
        n,
        p=[0.85, 0.09, 0.03, 0.01, 0.02],
    )
    education = rng.integers(3, 17, n)
    hours = np.clip(rng.normal(40, 12, n), 1, 99).round()
    workclass = rng.choice(["Private", "Self-emp", "Gov"], n, p=[0.7, 0.12, 0.18])
    capital = np.where(rng.random(n) < 0.08, rng.lognormal(8, 1, n), 0.0)
    logit = (
        -8.2
        + 0.33 * education
        + 0.035 * (age - 17) * (age < 60)
        + 0.03 * hours
        + 1.1 * (sex == "Male")
        + 0.4 * (race == "White")
        + 0.0002 * capital
        + 0.4 * (workclass == "Self-emp")
    )
    label = (rng.random(n) < sigmoid(logit)).astype(int)
    cols = {
        "income_high": label,
        "age": age,
        "sex": sex,
        "race": race,
        "education_num": education,
        "hours_per_week": hours,
        "workclass": workclass,
        "capital_gain": capital,
    }
    write("adult", cols, 15, rng)


def german(rng, n=1000):
    age = rng.integers(19, 75, n)
    sex = rng.choice(["male", "female"], n, p=[0.69, 0.31])
    foreign = rng.choice(["yes", "no"], n, p=[0.96, 0.04])
    duration = rng.integers(4, 72, n)
    amount = rng.lognormal(7.8, 0.8, n)
    housing = rng.choice(["own", "rent", "free"], n, p=[0.71, 0.18, 0.11])
    purpose = rng.choice(["car", "furniture", "radio_tv", "education", "business"], n)
    savings = rng.choice(["low", "moderate", "high", "none"], n, p=[0.6, 0.1, 0.12, 0.18])
    logit = (
        1.6
        - 0.03 * (duration - 20)
        - 0.00008 * (amount - 3000)
        + 0.02 * (age - 35)
        + 0.5 * (housing == "own")
        + 0.6 * (savings == "high")
        - 0.4 * (sex == "female")
        - 0.5 * (purpose == "education")
    )
    label = (rng.random(n) < sigmoid(logit)).astype(int)
    cols = {
        "good_credit": label,
        "age": age,
        "sex": sex,
        "foreign_worker": foreign,
        "duration": duration,
        "amount": amount,
        "housing": housing,
        "purpose": purpose,
        "savings": savings,
    }
    write("german", cols, 6, rng)


def law(rng, n=1823):
    age = rng.integers(21, 45, n)
    gender = rng.choice(["male", "female"], n, p=[0.56, 0.44])
    fam_inc = rng.integers(1, 6, n)
    lsat = np.clip(rng.normal(36 + 1.2 * (fam_inc - 3), 5, n), 10, 48)
    ugpa = np.clip(rng.normal(3.2, 0.4, n) + 0.01 * (lsat - 36), 1.5, 4.0)
    cluster = rng.integers(1, 7, n)
    logit = -9.0 + 0.22 * lsat + 0.9 * ugpa + 0.15 * (fam_inc - 3) + 0.25 * (gender == "male") - 0.15 * cluster
    label = (rng.random(n) < sigmoid(logit)).astype(int)
    cols = {
        "pass_bar": label,
        "age": age,
        "gender": gender,
        "fam_inc": fam_inc,
        "lsat": lsat,
        "ugpa": ugpa,
        "cluster": cluster,
    }
    write("law_school", cols, 8, rng)


if __name__ == "__main__":
    rng = np.random.default_rng(20191104)
    communities(rng)
    adult(rng)
    german(rng)
    law(rng)
