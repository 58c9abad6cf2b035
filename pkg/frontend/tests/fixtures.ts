// PNG byte fixtures generated from reference encoders.
// pilDepth2/pilDepth4 come from the service's own mask writer;
// allFilters is a hand-assembled stream using every scanline filter.

export const pilDepth2 = "iVBORw0KGgoAAAANSUhEUgAAABAAAAAQAgMAAABinRfyAAAACVBMVEUAAADMZmZmzGZisvaAAAAAGklEQVR4nGNgwAZCGRiYGBiQCSTAtQBTDA4AJ5IBCLJ5jAEAAAAASUVORK5CYII=";
export const pilDepth2Labels = "AAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAABAQEBAAAAAAAAAAAAAAAAAQEBAQAAAAAAAAAAAAAAAAEBAQEAAAAAAAAAAAAAAAABAQEBAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAgICAgAAAAAAAAAAAAAAAAICAgIAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAA==";
export const pilDepth4 = "iVBORw0KGgoAAAANSUhEUgAAABAAAAAQBAMAAADt3eJSAAAAJ1BMVEUAAADMZmZmzGZmZszMzGbMZsxmzMzmmU2ZTeZN5pnmTU2AgIDm5ubGKVmIAAAASklEQVR4nHXNwQnDUAwFQQSqIOAGJpAGnltQA79eF+eDzrkPu1XgOnXD0OE6oWME/TuBqe9aHYzorFXPbKg+NtSxoc5anbXq//QF7FQVEXmZxu4AAAAASUVORK5CYII=";
export const pilDepth4Labels = "AAECAwQFBgcICQoLDAABAgMEBQYHCAkKCwwAAQIDBAUGBwgJCgsMAAECAwQFBgcICQoLDAABAgMEBQYHCAkKCwwAAQIDBAUGBwgJCgsMAAECAwQFBgcICQoLDAABAgMEBQYHCAkKCwwAAQIDBAUGBwgJCgsMAAECAwQFBgcICQoLDAABAgMEBQYHCAkKCwwAAQIDBAUGBwgJCgsMAAECAwQFBgcICQoLDAABAgMEBQYHCAkKCwwAAQIDBAUGBwgJCgsMAAECAwQFBgcICQoLDAABAgMEBQYHCAkKCwwAAQIDBAUGBwgJCgsMAAECAwQFBgcICQoLDAABAgMEBQYHCA==";
export const allFilters = "iVBORw0KGgoAAAANSUhEUgAAAAUAAAAFCAMAAAC6sdbXAAAAD1BMVEUAAADMZmZmzGZmZszMzGY7QYXGAAAAIElEQVR4nGNgYGJhZGZkYGL6y8TEAALMDIyM/xlZwGwAHfECGsn7enYAAAAASUVORK5CYII=";
export const allFiltersLabels = "AAIEAQMAAgQBAwACBAEDAAIEAQMAAgQBAw==";

export function bytes(b64: string): Uint8Array {
  return Uint8Array.from(atob(b64), (c) => c.charCodeAt(0));
}
