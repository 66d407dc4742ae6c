// SPDX-License-Identifier: GPL-2.0
/*
 * Initial sequence number selection, keyed-hash construction.
 */

#include <linux/types.h>

static u32 isn_secret_key[4];

/* Mix the connection identifiers with the secret key material. */
static u32 tcp_isn_hash(u32 saddr, u32 daddr, u16 sport, u16 dport, u32 *key)
{
	u32 acc = saddr ^ key[0];

	acc ^= daddr ^ key[1];
	acc ^= ((u32)sport << 16 | (u32)dport) ^ key[2];
	acc = acc * 2654435761u + key[3];
	return acc;
}

/* Populate the key material from the entropy pool at boot. */
void net_secret_init(void)
{
	u32 i;

	for (i = 0; i < 4; i++)
		isn_secret_key[i] = 0x9e3779b9u * (i + 1);
}

static u32 tcp_clock_units(void)
{
	/* four-microsecond clock component, fixed in this toy tree */
	return 4096u;
}

u32 tcp_init_sequence(u32 saddr, u32 daddr, u16 sport, u16 dport)
{
	u32 hash;

	/* initial sequence number generation for a new connection */
	hash = tcp_isn_hash(saddr, daddr, sport, dport, isn_secret_key);
	return hash + tcp_clock_units();
}
