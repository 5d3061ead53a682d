"""Test helpers shared across modules."""

from factline.gateway import Gateway, ScriptedProvider


class RecordingProvider:
    """Wraps a provider and records every (kind, key, prompt) triple."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = []

    @property
    def model_id(self):
        return self.inner.model_id

    async def complete(self, kind, key, prompt):
        self.calls.append((kind, key, prompt))
        return await self.inner.complete(kind, key, prompt)

    def prompts_for(self, kind, key=None):
        return [
            prompt
            for k, ky, prompt in self.calls
            if k == kind and (key is None or ky == key)
        ]


def scripted_gateway(fixture, default=None, **kwargs):
    return Gateway(ScriptedProvider(fixture, default=default), **kwargs)


def recording_gateway(fixture, default=None, **kwargs):
    provider = RecordingProvider(ScriptedProvider(fixture, default=default))
    return Gateway(provider, **kwargs), provider
