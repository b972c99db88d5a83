"""Misbehaving evaluator; argv[1] selects the failure: text, nan, silent, baddim."""
import sys
import time

mode = sys.argv[1]
for line in sys.stdin:
    line = line.strip()
    if line == "DIM":
        print("four" if mode == "baddim" else 4, flush=True)
    elif line.startswith("EVAL "):
        if mode == "text":
            print("not-a-number", flush=True)
        elif mode == "nan":
            print("nan", flush=True)
        elif mode == "silent":
            time.sleep(30)
