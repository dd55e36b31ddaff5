"""Plan a research objective into a flow graph, run it with one injected failure, and synthesize.

Run: python3 demos/research_flow.py
"""

from sciloop.flowgraph import EchoExecutor, SynthesisBlocked, TemplatePlanner, create_flow, run_flow


def show(flow) -> None:
    for node in flow.nodes.values():
        print(f"  {node.id:<5} {node.t.value:<7} {node.s.value:<8} {node.d}")


def main() -> None:
    objective = "survey catalyst literature; collect yield data and then fit a kinetic model"
    flow = create_flow(objective)
    result = run_flow(flow, TemplatePlanner(), EchoExecutor())
    print("healthy run:")
    show(flow)
    print(f"  answer ({result.rule}): {result.answer}")

    flow = create_flow(objective)
    try:
        run_flow(flow, TemplatePlanner(), EchoExecutor(fail=["n1"]))
    except SynthesisBlocked as blocked:
        print("run with n1 failing:")
        show(flow)
        print(f"  synthesis blocked by {blocked.failed}")


if __name__ == "__main__":
    main()
