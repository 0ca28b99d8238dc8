from .generator import EventGenerator, GeneratorConfig, generate
