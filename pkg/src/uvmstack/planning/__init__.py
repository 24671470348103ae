from .collision import CollisionWorld
from .rrt import (
    GoalInCollision,
    IkFailed,
    PlannerParams,
    StartInCollision,
    Timeout,
    Trajectory,
    path_cost,
    plan_rrt_star,
    plan_to_pose,
    time_parameterize,
)
from .executive import (
    DeviationExceeded,
    ExecutionReport,
    MonitorParams,
    PickAndPlaceExecutive,
    TaskState,
    execute,
    run_pick_and_place,
    task_advance,
)

__all__ = [
    "CollisionWorld",
    "DeviationExceeded",
    "ExecutionReport",
    "GoalInCollision",
    "IkFailed",
    "MonitorParams",
    "PickAndPlaceExecutive",
    "PlannerParams",
    "StartInCollision",
    "TaskState",
    "Timeout",
    "Trajectory",
    "execute",
    "path_cost",
    "plan_rrt_star",
    "plan_to_pose",
    "run_pick_and_place",
    "task_advance",
    "time_parameterize",
]
