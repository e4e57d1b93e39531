"""服务层：几何内核、工具协议、反馈、奖励、策略优化、评测指标与 gym。"""
