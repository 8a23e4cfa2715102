"""Network power via matrix balancing."""
