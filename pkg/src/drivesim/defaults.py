"""Fixed simulation constants that the configuration surface does not expose.

Everything here is a documented engineering choice; changing a value changes
simulated behavior but not any interface.
"""

# lane-graph routing
LANE_WIDTH = 3.5                 # m, assumed uniform lane width
LANE_CHANGE_COST_FACTOR = 1.5    # lane-change edge cost = factor * LANE_WIDTH
HEADING_GATE = 1.5707963267948966  # pi/2, max |heading error| for localization
MAX_LATERAL_OFFSET = 10.0        # m, beyond this localization fails
WAYPOINT_SPACING = 1.0           # m, route resampling interval
TURN_THRESHOLD_DEG = 15.0        # signed heading change that labels a turn

# agent spawning
SPAWN_SPACING = 5.0              # m, candidate spawn-point interval
TRIGGER_JUNCTION_RADIUS = 30.0   # m, "near a junction" for trigger weighting
TRIGGER_JUNCTION_WEIGHT = 3.0    # sampling weight ratio near junctions

# car following (intelligent driver model)
IDM_A_MAX = 2.0                  # m/s^2 comfortable acceleration
IDM_B_COMF = 3.0                 # m/s^2 comfortable braking
IDM_T_HEADWAY = 1.5              # s desired time headway
IDM_S0 = 2.0                     # m standstill gap
IDM_EXPONENT = 4.0

# agent control
CORRIDOR_HALF_WIDTH = 2.0        # m, lateral half-width of the leader corridor
LEADER_RANGE = 75.0              # m, max leader lookahead
AGENT_LOOKAHEAD_TIME = 1.0       # s, pure-pursuit lookahead horizon
AGENT_LOOKAHEAD_MIN = 3.0        # m
LANE_CHANGE_DURATION = 3.0       # s, lateral blend duration
EMERGENCY_STOP_RANGE = 20.0      # m, ego distance that triggers the panic brake
EMERGENCY_BRAKE = -8.0           # m/s^2
IGNORE_SAFE_DISTANCE_GAP = 0.5   # m, replaces the standstill gap when reckless
SPEED_CAP_FACTOR = 1.3           # agents never exceed this times the lane limit

# expert planner
EXPERT_LOOKAHEAD_TIME = 1.2      # s
EXPERT_LOOKAHEAD_MIN = 4.0       # m
OFF_ROUTE_LIMIT = 5.0            # m, lateral offset that aborts the episode
LATERAL_ACCEL_MAX = 3.0          # m/s^2, curvature-based speed cap

# observation geometry
BEV_EXTENT = 100.0               # m, raster side length
BEV_RESOLUTION = 0.2             # m per cell
VISIBILITY_RANGE = 75.0          # m, camera visibility cutoff
OFFMAP_PAD = 10.0                # m, mapped-region margin beyond drivable bbox

# interaction range
SURROUND_WEDGE_DEG = 240.0
FORWARD_WEDGE_DEG = 30.0
INTERACTION_HEADWAY = 2.0        # s, surround radius = headway * v_max
ROUTE_LOOKAHEAD = 50.0           # m, route-crossing check horizon
