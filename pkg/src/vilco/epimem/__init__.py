from .shortterm import MemoryEntry, ShortTermMemory, st_sample_negatives, st_store
from .prompts import PromptPool, prompt_inject, prompt_loss, prompt_select

__all__ = [
    "MemoryEntry",
    "ShortTermMemory",
    "st_sample_negatives",
    "st_store",
    "PromptPool",
    "prompt_inject",
    "prompt_loss",
    "prompt_select",
]
