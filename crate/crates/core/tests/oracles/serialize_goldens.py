"""Writes serialization goldens for the fixture corpus by plain template
substitution. Shares no code with the library: tokenization, value lookup
and history truncation are re-derived here from the format description.

Usage: python3 serialize_goldens.py   (from this directory)
"""

import json
import os
import sqlite3
import string

FIX = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "fixtures")
OUT = os.path.join(FIX, "goldens")
PUNCT = set(string.punctuation) | set("“”‘’…«»")
MAX_NGRAM = 5
MIN_SUBSTRING = 4
TRUNCATION_BUDGETS = [48, 60, 72]


def tokenize(text):
    out = []
    for chunk in text.split():
        lead, trail = [], []
        while chunk and chunk[0] in PUNCT:
            lead.append(chunk[0])
            chunk = chunk[1:]
        while chunk and chunk[-1] in PUNCT:
            trail.insert(0, chunk[-1])
            chunk = chunk[:-1]
        out += lead + ([chunk] if chunk else []) + trail
    return [t.lower() for t in out]


def depluralize(w):
    if len(w) > 4 and w.endswith("ies"):
        return w[:-3] + "y"
    for suf in ("sses", "shes", "ches", "xes", "zes"):
        if len(w) > len(suf) and w.endswith(suf):
            return w[:-2]
    if len(w) > 2 and w.endswith("s") and w[-2:] not in ("ss", "us", "is"):
        return w[:-1]
    return w


def norm(words):
    out = []
    for w in words:
        w = "".join(c for c in w.lower() if c not in PUNCT)
        w = depluralize(w)
        if w:
            out.append(w)
    return out


def fuzzy(ngram, value):
    n = norm(ngram)
    if not n:
        return False
    if norm(tokenize(value)) == n:
        return True
    raw = " ".join(ngram).lower()
    return len(raw) >= MIN_SUBSTRING and raw in value.lower()


def load_content(db, columns):
    """(table_index, column_index) -> list of cell strings, text columns only."""
    dump = os.path.join(FIX, "content", db + ".json")
    lite = os.path.join(FIX, "content", db + ".sqlite")
    out = {}
    if os.path.exists(dump):
        data = json.load(open(dump))
        for c in data["columns"]:
            key = columns.get((c["table"].lower(), c["column"].lower()))
            if key is not None and key[2] == "text":
                out[key[:2]] = [str(v) for v in c["values"]]
    elif os.path.exists(lite):
        con = sqlite3.connect(lite)
        for (t, c), (ti, ci, ty) in columns.items():
            if ty != "text":
                continue
            tname, cname = t, c
            rows = con.execute(f'SELECT DISTINCT "{cname}" FROM "{tname}"').fetchall()
            vals = []
            for (v,) in rows:
                if v is None or isinstance(v, bytes):
                    continue
                vals.append(str(v))
            out[(ti, ci)] = vals
    return out


def value_spans(words, content):
    found = []
    is_word = [bool(norm([w])) for w in words]
    for col in sorted(content):
        hits = []
        for s in range(len(words)):
            for e in range(s + 1, min(len(words), s + MAX_NGRAM) + 1):
                if not (is_word[s] and is_word[e - 1]):
                    continue
                for v in content[col]:
                    if fuzzy(words[s:e], v):
                        hits.append((s, e, v))
                        break
        for s, e, v in hits:
            if not any(o[0] <= s and e <= o[1] and o[1] - o[0] > e - s for o in hits):
                found.append((s, e, col, v))
    found.sort(key=lambda f: (f[0], f[1], f[2]))
    return found


class Db:
    def __init__(self, raw):
        self.db_id = raw["db_id"]
        self.tables = [{"name": n, "columns": []} for n in raw["table_names_original"]]
        cols = {}
        for k, (t, name) in enumerate(raw["column_names_original"]):
            if t < 0:
                continue
            ci = len(self.tables[t]["columns"])
            self.tables[t]["columns"].append(name)
            cols[(raw["table_names_original"][t].lower(), name.lower())] = (t, ci, raw["column_types"][k])
        self.content = load_content(self.db_id, {k: v for k, v in cols.items()})
        # keep the original-case names for the sqlite queries
        self.sqlite_cols = cols

    def core(self, words):
        inserted = {}
        for s, e, col, v in value_spans(words, self.content):
            vals = inserted.setdefault(col, [])
            if v not in vals and v.split():
                vals.append(v)
        parts = [" ".join(words), self.db_id.lower()]
        for t, table in enumerate(self.tables):
            cells = []
            for c, name in enumerate(table["columns"]):
                cell = name.lower()
                if (t, c) in inserted:
                    cell += " [ " + " , ".join(inserted[(t, c)]) + " ]"
                cells.append(cell)
            parts.append(table["name"].lower() + " : " + " , ".join(cells))
        return " | ".join(parts)


def write(path, text):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w") as f:
        f.write(text + "\n")


def multi(db, turns, current, budget):
    core = db.core(turns[current - 1])
    total = len(core.split())
    if total > budget:
        return None
    kept = []
    for words in reversed(turns[: current - 1]):
        total += len(words) + 1
        if total > budget:
            break
        kept.append(" ".join(words))
    if not kept:
        return core
    return core + " || " + " | ".join(kept)


def main():
    dbs = {raw["db_id"]: Db(raw) for raw in json.load(open(os.path.join(FIX, "tables.json")))}
    for idx, ex in enumerate(json.load(open(os.path.join(FIX, "spider.json")))):
        text = dbs[ex["db_id"]].core(tokenize(ex["question"]))
        write(os.path.join(OUT, "single", f"{idx:05}_01.txt"), text)
    sparc = json.load(open(os.path.join(FIX, "sparc.json")))
    for idx, ex in enumerate(sparc):
        db = dbs[ex["database_id"]]
        turns = [tokenize(t["utterance"]) for t in ex["interaction"]]
        for cur in range(1, len(turns) + 1):
            write(os.path.join(OUT, "multi", f"{idx:05}_{cur:02}.txt"), multi(db, turns, cur, 512))
            for b in TRUNCATION_BUDGETS:
                text = multi(db, turns, cur, b)
                if text is not None:
                    write(os.path.join(OUT, f"multi_budget_{b}", f"{idx:05}_{cur:02}.txt"), text)


if __name__ == "__main__":
    main()
