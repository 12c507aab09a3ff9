"""Long-horizon manipulation planning toolkit.

Skill value functions are stored as tensor trains over state grids, a
symbolic layer proposes operator skeletons by Monte-Carlo tree search, and a
cross-entropy optimizer over mixed continuous/discrete subgoal variables
turns skeletons into executable plans.
"""

__version__ = "0.1.0"
