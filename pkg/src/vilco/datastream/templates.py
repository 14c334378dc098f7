"""The 13 natural-language query templates, keyed by template id."""

from __future__ import annotations

NLQ_TEMPLATES: dict[int, tuple[str, str]] = {
    1: ("Objects", "What did I put in X?"),
    2: ("Place", "Where did I put X?"),
    3: ("Objects", "Where is object X before/after event Y?"),
    4: ("People", "When did I talk to or interact with person with role X?"),
    5: ("Objects", "How many X's? (quantity question)"),
    6: ("Objects", "State of an object"),
    7: ("Objects", "Where is object X"),
    8: ("Objects", "In what location did I see object X?"),
    9: ("Objects", "What X did I Y?"),
    10: ("Objects", "What X is Y?"),
    11: ("Objects", "Where is my object X?"),
    12: ("People", "Who did I interact with when I did activity X?"),
    13: ("People", "Who did I talk to in location X?"),
}

NUM_TEMPLATES = len(NLQ_TEMPLATES)


def template_text(template_id: int) -> str:
    if template_id not in NLQ_TEMPLATES:
        raise KeyError(f"unknown template id {template_id} (valid: 1..{NUM_TEMPLATES})")
    return NLQ_TEMPLATES[template_id][1]


def template_domain(template_id: int) -> str:
    if template_id not in NLQ_TEMPLATES:
        raise KeyError(f"unknown template id {template_id} (valid: 1..{NUM_TEMPLATES})")
    return NLQ_TEMPLATES[template_id][0]
