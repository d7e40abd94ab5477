"""Real-network execution: frame codec, asyncio transport, replica and client processes."""
