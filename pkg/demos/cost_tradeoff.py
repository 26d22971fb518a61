"""Compare the time to generate demonstrations against collecting them by hand.

Run: python demos/cost_tradeoff.py
"""

from shapegen.costmodel import CostConstants, crossover_n_demo, crossover_n_shape, manual_cost, shapegen_cost


def main():
    c = CostConstants()
    print("n_shape n_demo  generated(s)  manual(s)")
    for n_shape, n_demo in ((1, 1), (5, 5), (15, 5), (15, 10), (50, 20), (200, 50)):
        g, m = shapegen_cost(c, n_shape, n_demo), manual_cost(c, n_shape, n_demo)
        mark = "  <- generation cheaper" if g < m else ""
        print(f"{n_shape:7d} {n_demo:6d} {g:13.0f} {m:10.0f}{mark}")
    print(f"with 15 shapes, generation wins from {crossover_n_demo(c, 15)} demos")
    print(f"with 5 demos, generation wins from {crossover_n_shape(c, 5)} shapes")
    c2 = CostConstants(t_collect_per_object=600.0)
    print(f"if buying each object costs 10 min, 5 demos win from {crossover_n_shape(c2, 5)} shapes")


if __name__ == "__main__":
    main()
