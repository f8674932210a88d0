"""Per-project values as printed in the published evaluation, for golden tests.

Projects: compress, gson, jackson-core, jackson-databind, jsoup.
"""

PROJECTS = ("compress", "gson", "jksnCore", "jksnDB", "jsoup")

# model -> metric -> (five per-project values, printed average)
MODEL_METRICS = {
    "codet5_no_da": {
        "parse_rate": ((20.75, 24.01, 14.21, 18.26, 39.27), 23.30),
        "compile_rate": ((1.66, 3.67, 0.70, 0.92, 22.51), 5.89),
        "bleu": ((11.59, 18.64, 16.39, 18.34, 25.56), 18.10),
        "codebleu": ((9.15, 16.64, 16.98, 16.78, 22.10), 16.33),
        "line_coverage": ((2.00, 25.60, 2.10, 31.40, 63.10), 24.84),
        "mutation_score": ((0.55, 12.26, 0.07, 11.95, 32.78), 11.52),
    },
    "codet5_da": {
        "parse_rate": ((89.29, 100.00, 93.33, 94.46, 100.00), 95.42),
        "compile_rate": ((39.29, 47.67, 38.33, 28.37, 62.50), 43.23),
        "bleu": ((40.84, 42.06, 28.41, 36.74, 44.36), 38.48),
        "codebleu": ((22.37, 35.12, 30.06, 31.70, 44.10), 32.67),
        "line_coverage": ((32.80, 52.20, 21.20, 43.10, 68.00), 43.46),
        "mutation_score": ((20.53, 35.61, 8.70, 28.60, 46.42), 27.97),
    },
    "gpt4": {
        "parse_rate": ((99.28, 98.55, 98.37, 98.08, 99.40), 98.74),
        "compile_rate": ((2.90, 17.15, 4.20, 7.52, 22.75), 10.90),
        "bleu": ((18.53, 26.39, 18.29, 22.43, 27.11), 22.55),
        "codebleu": ((18.73, 28.19, 23.32, 23.87, 25.65), 23.95),
        "line_coverage": ((0.70, 32.40, 4.10, 33.20, 56.80), 25.44),
        "mutation_score": ((0.10, 15.93, 0.98, 14.44, 43.45), 14.98),
    },
    "a3test": {
        "parse_rate": ((53.70, 64.61, 44.98, 68.16, 56.25), 57.54),
        "compile_rate": ((1.93, 6.85, 1.27, 1.07, 17.14), 5.65),
        "bleu": ((11.33, 16.44, 13.08, 15.75, 18.79), 15.08),
        "codebleu": ((7.42, 15.61, 13.32, 15.58, 18.11), 14.01),
        "line_coverage": ((2.00, 29.50, 2.00, 31.60, 52.80), 23.58),
        "mutation_score": ((0.00, 12.85, 0.01, 11.95, 34.98), 11.96),
    },
}

# with-DA minus each baseline, in percentage points, as quoted in the text
QUOTED_DELTAS = {
    ("codet5_no_da", "line_coverage"): 18.62,
    ("a3test", "line_coverage"): 19.88,
    ("gpt4", "line_coverage"): 18.02,
    ("codet5_no_da", "mutation_score"): 16.45,
    ("a3test", "mutation_score"): 16.01,
    ("gpt4", "mutation_score"): 12.99,
    ("codet5_no_da", "parse_rate"): 72.12,
    ("codet5_no_da", "compile_rate"): 37.34,
    ("codet5_no_da", "bleu"): 20.38,
    ("codet5_no_da", "codebleu"): 16.34,
}

# line coverage against the search-based baseline: model CL, baseline CL, new CL count and %, total lines
AUGMENTATION_LINES = {
    "compress": (216, 87, 174, 46.70, 372),
    "gson": (458, 539, 31, 4.70, 657),
    "jksnCore": (399, 674, 82, 6.20, 1307),
    "jksnDB": (1357, 136, 1246, 48.00, 2595),
    "jsoup": (192, 39, 157, 66.50, 519),
}
AUGMENTATION_LINES_AVG = {"new_cl": 338, "new_cl_percent": 34.42, "total_lines": 1090}

# mutation: model MS, baseline MS, model AMS, baseline AMS, new MK count and %
AUGMENTATION_MUTANTS = {
    "compress": (0.00, 55.90, 0.00, 69.50, 0, 0.0),
    "gson": (13.50, 64.90, 50.00, 100.00, 0, 0.0),
    "jksnCore": (14.80, 87.20, 50.70, 100.00, 0, 0.0),
    "jksnDB": (22.40, 0.00, 54.20, 0.00, 26, 22.40),
    "jsoup": (32.00, 0.00, 47.10, 0.00, 8, 32.0),
}
AUGMENTATION_MUTANTS_AVG = {"model_ms": 16.54, "baseline_ms": 41.60, "model_ams": 40.40,
                            "baseline_ams": 53.90, "new_mk": 6.8, "new_mk_percent": 11.0}
