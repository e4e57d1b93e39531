"""cadgym 包入口：CAD 工具调用智能体的建模 gym。"""
