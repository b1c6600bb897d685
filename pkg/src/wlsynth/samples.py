"""Sample schemas, templates and reference applications.

The reference applications stand in for production systems: they emit heavy
traces with planted business logic and known access patterns, so the
extracted statistics can be checked against what was planted.
"""

import math
import random

import numpy as np

CHAIN_SCHEMA = """\
TABLE Z (z1 integer, z2 decimal, z3 decimal) PK(z1)
TABLE S (s1 integer, s2 integer, s3 decimal) PK(s1, s2) FK(s1 -> Z(z1))
TABLE T (t1 integer, t2 integer, t3 decimal) PK(t1, t2) FK(t1 -> S(s1))
"""

TXA = """\
TEMPLATE TXA {
    update S set s3 = s3 + ? where s1 = ? and s2 = ? -> params(val S.s3, key S.s1, key S.s2) filter(pk);
    update T set t3 = t3 + ? where t1 = ? and t2 = ? -> params(val T.t3, key T.t1, key T.t2) filter(pk);
    select z2, z3 from Z where z1 = ? -> params(key Z.z1) returns(Z.z2, Z.z3) filter(pk);
    update Z set z2 = z2 - ? where z1 = ? -> params(val Z.z2, key Z.z1) filter(pk);
}
"""

TXB = """\
TEMPLATE TXB {
    call transfer(?, ?, ?) -> params(key S.s1, key S.s2, val S.s3);
}
"""

TXC = """\
TEMPLATE TXC {
    select t3 from T where t1 between ? and ? -> params(key T.t1, key T.t1) returns(T.t3) filter(nonkey);
    BRANCH {
        { update Z set z3 = z3 + ? where z1 = ? -> params(val Z.z3, key Z.z1) filter(pk); }
        | { update S set s3 = s3 - ? where s1 = ? and s2 = ? -> params(val S.s3, key S.s1, key S.s2) filter(pk); }
    };
    LOOP { insert into T (t1, t2, t3) values (?, ?, ?) -> params(key T.t1, key T.t2, val T.t3) filter(pk); };
}
"""

PAYMENT_SCHEMA = """\
TABLE warehouse (w_id integer, w_ytd decimal, w_name varchar) PK(w_id)
TABLE district (d_w_id integer, d_id integer, d_ytd decimal, d_name varchar) PK(d_w_id, d_id) FK(d_w_id -> warehouse(w_id))
TABLE customer (c_w_id integer, c_d_id integer, c_id integer, c_balance decimal) PK(c_w_id, c_d_id, c_id) FK(c_w_id, c_d_id -> district(d_w_id, d_id))
TABLE history (h_w_id integer, h_d_id integer, h_c_id integer, h_amount decimal) PK(h_w_id) FK(h_w_id -> warehouse(w_id))
"""

PAYMENT = """\
TEMPLATE Payment {
    update warehouse set w_ytd = w_ytd + ? where w_id = ? -> params(val warehouse.w_ytd, key warehouse.w_id) filter(pk);
    select w_name from warehouse where w_id = ? -> params(key warehouse.w_id) returns(warehouse.w_name) filter(pk);
    update district set d_ytd = d_ytd + ? where d_w_id = ? and d_id = ? -> params(val district.d_ytd, key district.d_w_id, key district.d_id) filter(pk);
    select d_name from district where d_w_id = ? and d_id = ? -> params(key district.d_w_id, key district.d_id) returns(district.d_name) filter(pk);
    update customer set c_balance = c_balance - ? where c_w_id = ? and c_d_id = ? and c_id = ? -> params(val customer.c_balance, key customer.c_w_id, key customer.c_d_id, key customer.c_id) filter(pk);
    select c_balance from customer where c_w_id = ? and c_d_id = ? and c_id = ? -> params(key customer.c_w_id, key customer.c_d_id, key customer.c_id) returns(customer.c_balance) filter(pk);
    insert into history (h_w_id, h_d_id, h_c_id, h_amount) values (?, ?, ?, ?) -> params(key history.h_w_id, val history.h_d_id, val history.h_c_id, val history.h_amount) filter(none);
}
"""

YCSB_SCHEMA = """\
TABLE usertable (ycsb_key integer, field0 varchar) PK(ycsb_key)
"""

YCSB_RMW = """\
TEMPLATE RMW5 {
    select field0 from usertable where ycsb_key = ? -> params(key usertable.ycsb_key) returns(usertable.field0) filter(pk);
    update usertable set field0 = ? where ycsb_key = ? -> params(val usertable.field0, key usertable.ycsb_key) filter(pk);
    select field0 from usertable where ycsb_key = ? -> params(key usertable.ycsb_key) returns(usertable.field0) filter(pk);
    update usertable set field0 = ? where ycsb_key = ? -> params(val usertable.field0, key usertable.ycsb_key) filter(pk);
    select field0 from usertable where ycsb_key = ? -> params(key usertable.ycsb_key) returns(usertable.field0) filter(pk);
    update usertable set field0 = ? where ycsb_key = ? -> params(val usertable.field0, key usertable.ycsb_key) filter(pk);
    select field0 from usertable where ycsb_key = ? -> params(key usertable.ycsb_key) returns(usertable.field0) filter(pk);
    update usertable set field0 = ? where ycsb_key = ? -> params(val usertable.field0, key usertable.ycsb_key) filter(pk);
    select field0 from usertable where ycsb_key = ? -> params(key usertable.ycsb_key) returns(usertable.field0) filter(pk);
    update usertable set field0 = ? where ycsb_key = ? -> params(val usertable.field0, key usertable.ycsb_key) filter(pk);
}
"""


def chain_characteristics():
    """Table characteristics for CHAIN_SCHEMA with sizes 100/1000/2000."""
    from .characteristics import ColumnCharacteristics as CC, TableCharacteristics as TC

    return {
        "Z": TC("Z", 100, {
            "z1": CC("z1", "integer", 1, 100, 100),
            "z2": CC("z2", "decimal", 0.0, 1000.0, 1),
            "z3": CC("z3", "decimal", -50.0, 50.0, 1),
        }),
        "S": TC("S", 1000, {
            "s1": CC("s1", "integer", 1, 100, 100),
            "s2": CC("s2", "integer", 1, 10, 10),
            "s3": CC("s3", "decimal", 0.0, 100.0, 10),
        }),
        "T": TC("T", 2000, {
            "t1": CC("t1", "integer", 1, 100, 100),
            "t2": CC("t2", "integer", 1, 20, 20),
            "t3": CC("t3", "decimal", 1.0, 2.0, 20),
        }),
    }


def planted_logic():
    """Transaction logic for TXA and TXC with the worked-example values."""
    from .logic import DepItem, ParamLogic, StructureInfo, TransactionLogic
    from .model import P

    txa = TransactionLogic("TXA", StructureInfo(), {
        P(2, 2): ParamLogic(pd2=[DepItem(P(2, 2), "ER", 0.99, P(1, 2))]),
        P(4, 2): ParamLogic(pd2=[DepItem(P(4, 2), "ER", 1.0, P(3, 1))]),
    })
    txc = TransactionLogic("TXC", StructureInfo([(0.4, 0.6)], [10.0]), {
        P(1, 2): ParamLogic(pd1=DepItem(P(1, 2), "BR", 1.0, P(1, 1), delta=8)),
        P(4, 1): ParamLogic(pd3=[DepItem(P(4, 1), "LR", 1.0, a=1, b=0)]),
        P(4, 2): ParamLogic(pd3=[DepItem(P(4, 2), "LR", 1.0, a=1, b=1)]),
    })
    return {"TXA": txa, "TXC": txc}


# ---------------------------------------------------------------------------
# Payment-like reference application


def payment_characteristics(warehouses=10, districts=10, customers=300):
    from .characteristics import ColumnCharacteristics as CC, TableCharacteristics as TC

    W, D, C = warehouses, districts, customers
    return {
        "warehouse": TC("warehouse", W, {
            "w_id": CC("w_id", "integer", 1, W, W),
            "w_ytd": CC("w_ytd", "decimal", 0.0, 1e6, W),
            "w_name": CC("w_name", "varchar", 6, 10, W),
        }),
        "district": TC("district", W * D, {
            "d_w_id": CC("d_w_id", "integer", 1, W, W),
            "d_id": CC("d_id", "integer", 1, D, D),
            "d_ytd": CC("d_ytd", "decimal", 0.0, 1e5, W * D),
            "d_name": CC("d_name", "varchar", 6, 10, W * D),
        }),
        "customer": TC("customer", W * D * C, {
            "c_w_id": CC("c_w_id", "integer", 1, W, W),
            "c_d_id": CC("c_d_id", "integer", 1, D, D),
            "c_id": CC("c_id", "integer", 1, C, C),
            "c_balance": CC("c_balance", "decimal", -1000.0, 5000.0, 500),
        }),
        "history": TC("history", W, {
            "h_w_id": CC("h_w_id", "integer", 1, W, W),
            "h_d_id": CC("h_d_id", "integer", 1, D, D),
            "h_c_id": CC("h_c_id", "integer", 1, C, C),
            "h_amount": CC("h_amount", "decimal", 1.0, 5000.0, 5000),
        }),
    }


def payment_trace(transactions, workers=10, tps=200.0, seed=0, warehouses=10, districts=10,
                  customers=300):
    """Heavy trace of the Payment reference application.

    Every transaction pays one customer of one district of one warehouse, so
    all warehouse ids within a transaction agree.
    """
    from .model import OpRecord, TransactionInstance

    rng = random.Random(f"payment:{seed}")
    out = []
    for k in range(transactions):
        w = rng.randint(1, warehouses)
        d = rng.randint(1, districts)
        c = rng.randint(1, customers)
        amount = round(rng.uniform(1.0, 5000.0), 2)
        ops = (
            OpRecord(1, 1, (amount, w)),
            OpRecord(2, 1, (w,), ((f"wh{w:04d}",),)),
            OpRecord(3, 1, (amount, w, d)),
            OpRecord(4, 1, (w, d), ((f"di{w:03d}{d:03d}",),)),
            OpRecord(5, 1, (amount, w, d, c)),
            OpRecord(6, 1, (w, d, c), ((round(1000.0 - amount, 2),),)),
            OpRecord(7, 1, (w, d, c, amount)),
        )
        out.append(TransactionInstance("Payment", int(k * 1000 / tps), ops, k % workers))
    return out


def independent_draw_distributed_ratio(weights, partitions, draws):
    """Chance that ``draws`` independent ids, drawn with ``weights`` over ids
    1..len(weights), do not all fall into one partition (id mod partitions).

    Enumerates every joint outcome of the draws (brute force), so keep the
    id count and draw count small.
    """
    total = float(sum(weights))
    probs = [w / total for w in weights]
    ids = range(1, len(probs) + 1)
    same = 0.0

    def rec(depth, part, p):
        nonlocal same
        if depth == draws:
            same += p
            return
        for i in ids:
            q = i % partitions
            if part is None or q == part:
                rec(depth + 1, q, p * probs[i - 1])

    rec(0, None, 1.0)
    return 1.0 - same


# ---------------------------------------------------------------------------
# key-value reference application with shifting hot spots


def ycsb_characteristics(records=10_000):
    from .characteristics import ColumnCharacteristics as CC, TableCharacteristics as TC

    return {"usertable": TC("usertable", records, {
        "ycsb_key": CC("ycsb_key", "integer", 1, records, records),
        "field0": CC("field0", "varchar", 8, 12, records),
    })}


def zipf_probabilities(n, s):
    ranks = np.arange(1, n + 1, dtype=np.float64)
    w = ranks ** (-s)
    return w / w.sum()


def ycsb_trace(phases=(("zipf", 1.0), ("zipf", 1.2), ("uniform", 1000)), phase_seconds=30.0,
               tps=100.0, records=10_000, workers=10, seed=0):
    """Heavy trace of 5-step read-modify-write transactions.

    Each phase draws keys from its own distribution over its own random
    permutation of the key space, so hot keys move at phase boundaries.
    """
    from .model import OpRecord, TransactionInstance

    rng = np.random.default_rng([seed, 7])
    out = []
    k = 0
    for pno, (kind, arg) in enumerate(phases):
        perm = rng.permutation(records) + 1
        n = int(round(phase_seconds * tps))
        if kind == "zipf":
            keys = perm[rng.choice(records, size=(n, 5), p=zipf_probabilities(records, arg))]
        else:
            subset = perm[:int(arg)]
            keys = subset[rng.integers(0, len(subset), size=(n, 5))]
        for row in keys.tolist():
            ops = []
            for step, key in enumerate(row):
                val = f"v{int(rng.integers(10**7, 10**8))}"
                ops.append(OpRecord(2 * step + 1, 1, (key,), ((f"old{key}",),)))
                ops.append(OpRecord(2 * step + 2, 1, (val, key)))
            ts = int(math.floor((pno * phase_seconds + (k - pno * n) / tps) * 1000))
            out.append(TransactionInstance("RMW5", ts, tuple(ops), k % workers))
            k += 1
    return out


# ---------------------------------------------------------------------------
# wide template for extraction timing


def wide_template(ops=5, params_per_op=4):
    lines = ["TEMPLATE Wide {"]
    for i in range(ops):
        cols = ", ".join(f"c{j}" for j in range(params_per_op))
        slots = ", ".join(f"val -:integer" for _ in range(params_per_op))
        marks = ", ".join("?" for _ in range(params_per_op))
        lines.append(f"    insert into W{i} ({cols}) values ({marks}) -> params({slots}) filter(none);")
    lines.append("}")
    return "\n".join(lines) + "\n"


def wide_trace(n, ops=5, params_per_op=4, seed=0):
    """Instances of the wide template with a few planted relations."""
    from .model import OpRecord, TransactionInstance

    rng = random.Random(f"wide:{seed}")
    out = []
    for k in range(n):
        base = rng.randint(1, 10**6)
        recs = []
        for i in range(ops):
            vals = [rng.randint(1, 10**6) for _ in range(params_per_op)]
            if i:
                vals[0] = base if rng.random() < 0.9 else vals[0]
                vals[1] = 3 * base + 7
            recs.append(OpRecord(i + 1, 1, tuple(vals)))
        out.append(TransactionInstance("Wide", k, tuple(recs)))
    return out
