from .network import (
    MalformedRollout,
    ParkingPolicyNet,
    PolicyConfig,
    PolicyOutputs,
    one_hot_bev,
    teacher_inputs,
)
